use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// One result row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub experiment: String,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

impl ResultRecord {
    pub fn new(experiment: &str, seed: u64, step: u64, metric: impl Into<String>, value: f64) -> Self {
        ResultRecord { experiment: experiment.to_string(), seed, step, metric: metric.into(), value }
    }
}

/// Writes the manifest, then `results.csv`, into `out_dir`.
pub fn write_results(out_dir: &Path, cfg: &ExperimentConfig, records: &[ResultRecord]) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut m = BufWriter::new(fs::File::create(out_dir.join(MANIFEST_FILE))?);
    writeln!(m, "experiment = {}", cfg.experiment.name())?;
    writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(m, "seed = {}", cfg.run.seed)?;
    writeln!(m)?;
    m.write_all(cfg.manifest_body().as_bytes())?;
    m.flush()?;
    let mut w = BufWriter::new(fs::File::create(out_dir.join(RESULTS_FILE))?);
    writeln!(w, "experiment,seed,step,metric,value")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.experiment, r.seed, r.step, r.metric, r.value)?;
    }
    w.flush()?;
    Ok(())
}
