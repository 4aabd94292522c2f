//! Experiment runners and their result plumbing.
//!
//! Every runner is deterministic in `(config, seed)`: trials run in parallel
//! but their records are concatenated in trial order.

mod approx;
mod budget;
pub mod config;
mod norm_bias;
mod regret_run;
mod sink;
mod train;

use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gcn::GcnState;
use crate::graph::{read_edge_list, read_features, LoadOptions, SparseGraph};
use crate::rng::{mix, stream, Purpose};
use crate::sampler::{Sampler, SamplerKind};
use crate::synth::{generate_sbm, Split};

pub use approx::{aggregation_error, run_approx_error};
pub use budget::{probe_rewards, run_budget_monitor};
pub use config::{ExperimentConfig, ExperimentKind, GraphSource};
pub use norm_bias::run_norm_bias;
pub use regret_run::run_regret_scaling;
pub use sink::{write_results, ResultRecord, MANIFEST_FILE, RESULTS_FILE};
pub use train::run_train_accuracy;

/// Runs whatever experiment the config names.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let records = match cfg.experiment {
        ExperimentKind::ApproxError => run_approx_error(cfg)?,
        ExperimentKind::NormBias => run_norm_bias(cfg)?,
        ExperimentKind::TrainAccuracy => run_train_accuracy(cfg)?,
        ExperimentKind::RegretScaling => run_regret_scaling(cfg)?,
        ExperimentKind::BudgetMonitor => run_budget_monitor(cfg)?,
    };
    if let Some(r) = records.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::NonFinite(format!("{} = {} at step {}", r.metric, r.value, r.step)));
    }
    Ok(records)
}

/// Labeled graph ready for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SparseGraph,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn labels_of(&self, roots: &[usize]) -> Vec<usize> {
        roots.iter().map(|&v| self.labels[v]).collect()
    }

    pub fn accuracy(&self, state: &GcnState, nodes: &[usize]) -> Result<f64> {
        if nodes.is_empty() {
            return Ok(0.0);
        }
        let pred = state.predict(&self.graph, nodes)?;
        let hits = pred.iter().zip(nodes).filter(|(p, &v)| **p == self.labels[v]).count();
        Ok(hits as f64 / nodes.len() as f64)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let opts = LoadOptions { self_loops: cfg.graph.self_loops };
    let weighting = cfg.graph.weighting.clone();
    match &cfg.graph.source {
        GraphSource::Synthetic(spec) => {
            let lg = generate_sbm(spec, cfg.run.seed)?;
            Ok(Dataset { graph: lg.build(weighting, opts)?, labels: lg.labels, classes: lg.classes, split: lg.split })
        }
        GraphSource::Files(f) => {
            let features = read_features(&f.features)?;
            let labels = read_ids(&f.labels)?;
            let n = labels.len();
            let graph = SparseGraph::load_edge_list(&read_edge_list(&f.edges)?, n, weighting, opts)?
                .attach_features(features)?;
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            let split = Split { train: read_ids(&f.train)?, val: read_ids(&f.val)?, test: read_ids(&f.test)? };
            for v in split.train.iter().chain(&split.val).chain(&split.test) {
                if *v >= n {
                    return Err(Error::UnknownNode(*v));
                }
            }
            Ok(Dataset { graph, labels, classes, split })
        }
    }
}

/// One non-negative integer per line; `#` comments allowed.
pub fn read_ids(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let s = line.split('#').next().unwrap().trim();
        if s.is_empty() {
            continue;
        }
        out.push(s.parse().map_err(|_| Error::Format(format!("{}:{}: bad id {s:?}", path.display(), no + 1)))?);
    }
    Ok(out)
}

pub(crate) fn trial_seed(base: u64, trial: usize) -> u64 {
    mix(&[base, trial as u64])
}

/// Shuffled mini-batches of the training roots for one epoch.
pub(crate) fn epoch_batches(train: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(&mut stream(seed, Purpose::Batch, epoch as u64, 0));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn new_model(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<GcnState> {
    let mut dims = vec![data.graph.feature_dim()];
    dims.extend(std::iter::repeat_n(cfg.model.hidden, cfg.model.depth - 1));
    dims.push(data.classes.max(1));
    GcnState::glorot(&dims, cfg.model.activation, cfg.model.lr, seed)
}

pub(crate) fn new_sampler(kind: &SamplerKind, data: &Dataset, seed: u64, role: u64) -> Result<Sampler> {
    Sampler::new(*kind, data.graph.node_count(), mix(&[seed, role]))
}

/// Runs `body` for every trial in parallel and concatenates in trial order.
pub(crate) fn per_trial<F>(trials: usize, body: F) -> Result<Vec<Vec<ResultRecord>>>
where
    F: Fn(usize) -> Result<Vec<ResultRecord>> + Sync + Send,
{
    (0..trials).into_par_iter().map(body).collect()
}

/// Labels for two samplers; identical algorithms get a role prefix.
pub(crate) fn sampler_labels(a: &SamplerKind, b: &SamplerKind) -> (String, String) {
    let (x, y) = (a.algo.name().to_string(), b.algo.name().to_string());
    if x == y {
        (format!("sampler_{x}"), format!("baseline_{y}"))
    } else {
        (x, y)
    }
}

pub(crate) fn require_baseline(cfg: &ExperimentConfig) -> Result<SamplerKind> {
    cfg.baseline.ok_or_else(|| Error::Config(format!("{} needs a [baseline] sampler", cfg.experiment.name())))
}
