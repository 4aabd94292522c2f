//! Node-classification training curves per sampler.

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;
use crate::experiment::sink::ResultRecord;
use crate::experiment::{
    epoch_batches, load_dataset, new_model, new_sampler, per_trial, sampler_labels, trial_seed, Dataset,
};
use crate::sampler::SamplerKind;

const NAME: &str = "train_accuracy";

/// Statistics of the rewards a sampler produced over one run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct RewardStats {
    pub count: usize,
    pub sum: f64,
    pub max: f64,
}

impl RewardStats {
    pub fn add(&mut self, rewards: &[f64]) {
        for &r in rewards {
            self.count += 1;
            self.sum += r;
            self.max = self.max.max(r);
        }
    }
}

/// Trains one model with `kind` and returns its records.
pub(crate) fn train_one(
    cfg: &ExperimentConfig,
    data: &Dataset,
    kind: &SamplerKind,
    label: &str,
    seed: u64,
    role: u64,
) -> Result<Vec<ResultRecord>> {
    let mut state = new_model(cfg, data, seed)?;
    let mut sampler = new_sampler(kind, data, seed, role)?;
    let depth = cfg.model.depth;
    let mut out = Vec::new();
    let mut stats = RewardStats::default();
    let metric = |m: &str| format!("{label}.{m}");
    let mut best = (f64::NEG_INFINITY, data.accuracy(&state, &data.split.test)?);
    out.push(ResultRecord::new(NAME, seed, 0, metric("val_acc"), data.accuracy(&state, &data.split.val)?));
    out.push(ResultRecord::new(NAME, seed, 0, metric("test_acc"), best.1));
    for epoch in 0..cfg.run.epochs {
        let mut loss = 0.0;
        let batches = epoch_batches(&data.split.train, cfg.run.batch_size, seed, epoch);
        let nb = batches.len();
        for batch in batches {
            sampler.begin_step();
            let plan = sampler.build_plan(&data.graph, &batch, depth)?;
            let labels = data.labels_of(plan.roots());
            let report = state.sgd_step(&data.graph, &plan, &labels)?;
            loss += report.loss;
            stats.add(&sampler.feedback(&data.graph, &plan, &report.trace)?.rewards);
        }
        let e = epoch as u64 + 1;
        let val = data.accuracy(&state, &data.split.val)?;
        let test = data.accuracy(&state, &data.split.test)?;
        if val > best.0 {
            best = (val, test);
        }
        out.push(ResultRecord::new(NAME, seed, e, metric("loss"), loss / nb.max(1) as f64));
        out.push(ResultRecord::new(NAME, seed, e, metric("val_acc"), val));
        out.push(ResultRecord::new(NAME, seed, e, metric("test_acc"), test));
    }
    let e = cfg.run.epochs as u64;
    out.push(ResultRecord::new(NAME, seed, e, metric("best_val_test_acc"), best.1));
    out.push(ResultRecord::new(NAME, seed, e, metric("reward_count"), stats.count as f64));
    if stats.count > 0 {
        let m = stats.sum / stats.count as f64;
        out.push(ResultRecord::new(NAME, seed, e, metric("reward_mean"), m));
        out.push(ResultRecord::new(NAME, seed, e, metric("reward_max"), stats.max));
        if m > 0.0 {
            out.push(ResultRecord::new(NAME, seed, e, metric("reward_max_over_mean"), stats.max / m));
        }
    }
    Ok(out)
}

/// Trains with `[sampler]` and, if present, `[baseline]` under paired seeds.
pub fn run_train_accuracy(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let data = load_dataset(cfg)?;
    let labels = cfg.baseline.as_ref().map(|b| sampler_labels(&cfg.sampler, b));
    let per = per_trial(cfg.run.trials, |trial| {
        let seed = trial_seed(cfg.run.seed, trial);
        let first = labels.as_ref().map_or(cfg.sampler.algo.name().to_string(), |l| l.0.clone());
        let mut out = train_one(cfg, &data, &cfg.sampler, &first, seed, 1)?;
        if let (Some(b), Some(l)) = (&cfg.baseline, &labels) {
            out.extend(train_one(cfg, &data, b, &l.1, seed, 2)?);
        }
        Ok(out)
    })?;
    Ok(per.into_iter().flatten().collect())
}
