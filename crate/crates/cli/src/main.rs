//! `bgs`: runs the sampling experiments and writes `manifest.txt` plus
//! `results.csv` into the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bgs::experiment::config::ExperimentKind;
use bgs::experiment::{run, write_results, ExperimentConfig, GraphSource, ResultRecord};
use bgs::graph::{write_edge_list, write_features};
use bgs::synth::generate_sbm;
use bgs::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bgs", version, about = "Bandit-driven neighbor sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregation error of the sampler against the baseline.
    ApproxError(Common),
    /// Sampling counts of nodes with scaled-up features.
    NormBias(Common),
    /// Node-classification training curves.
    Train(Common),
    /// Regret scaling on drifting bandit environments.
    Regret(Common),
    /// Reward boundedness and variation budget during training.
    BudgetMonitor(Common),
    /// Writes the configured synthetic graph as plain files.
    SynthGraph(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_MONITOR: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::ApproxError(a) => (Some(ExperimentKind::ApproxError), a),
        Command::NormBias(a) => (Some(ExperimentKind::NormBias), a),
        Command::Train(a) => (Some(ExperimentKind::TrainAccuracy), a),
        Command::Regret(a) => (Some(ExperimentKind::RegretScaling), a),
        Command::BudgetMonitor(a) => (Some(ExperimentKind::BudgetMonitor), a),
        Command::SynthGraph(a) => (None, a),
    };
    match execute(kind, &args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::NonFinite(_) => EXIT_NUMERIC,
                _ => 1,
            })
        }
    }
}

fn execute(kind: Option<ExperimentKind>, args: &Common) -> bgs::Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let Some(kind) = kind else {
        synth_graph(&cfg, &args.out)?;
        eprintln!("wrote synthetic graph to {}", args.out.display());
        return Ok(ExitCode::SUCCESS);
    };
    let cfg = cfg.with_experiment(kind)?;
    let records = run(&cfg)?;
    write_results(&args.out, &cfg, &records)?;
    eprintln!("wrote {} records to {}", records.len(), args.out.display());
    let violations = monitor_violations(&records);
    if violations > 0 {
        eprintln!("monitor: {violations} violation records");
        return Ok(ExitCode::from(EXIT_MONITOR));
    }
    Ok(ExitCode::SUCCESS)
}

/// Records flagging a failed monitor check.
fn monitor_violations(records: &[ResultRecord]) -> usize {
    records
        .iter()
        .filter(|r| (r.metric == "budget_ok" && r.value == 0.0) || (r.metric.ends_with("_violations") && r.value > 0.0))
        .count()
}

fn synth_graph(cfg: &ExperimentConfig, out: &Path) -> bgs::Result<()> {
    let GraphSource::Synthetic(spec) = &cfg.graph.source else {
        return Err(Error::Config("synth-graph needs a synthetic [graph] section, not edge files".into()));
    };
    let lg = generate_sbm(spec, cfg.run.seed)?;
    fs::create_dir_all(out)?;
    write_edge_list(BufWriter::new(File::create(out.join("edges.tsv"))?), &lg.edges)?;
    write_features(BufWriter::new(File::create(out.join("features.txt"))?), lg.features.view())?;
    write_ids(&out.join("labels.txt"), &lg.labels)?;
    write_ids(&out.join("train.txt"), &lg.split.train)?;
    write_ids(&out.join("val.txt"), &lg.split.val)?;
    write_ids(&out.join("test.txt"), &lg.split.test)?;
    let mut g = BufWriter::new(File::create(out.join("graph.toml"))?);
    writeln!(g, "[graph]")?;
    for key in ["edges = edges.tsv", "features = features.txt", "labels = labels.txt"] {
        writeln!(g, "{key}")?;
    }
    for key in ["train", "val", "test"] {
        writeln!(g, "{key} = {key}.txt")?;
    }
    g.flush()?;
    Ok(())
}

fn write_ids(path: &Path, ids: &[usize]) -> bgs::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}
