//! How often samplers pick neighbors whose features were scaled up.

use rand::seq::index;

use crate::error::{invalid, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::sink::ResultRecord;
use crate::experiment::{
    epoch_batches, load_dataset, new_model, new_sampler, per_trial, sampler_labels, trial_seed, Dataset,
};
use crate::rng::{stream, Purpose};
use crate::sampler::SamplerKind;
use crate::stats::{mean, welch_t};

const NAME: &str = "norm_bias";

/// Training nodes picked for corruption in a trial.
pub fn corrupted_nodes(train: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let n = ((train.len() as f64) * fraction).round() as usize;
    let mut rng = stream(seed, Purpose::Corruption, 0, 0);
    let mut picked: Vec<usize> =
        index::sample(&mut rng, train.len(), n.min(train.len())).into_iter().map(|i| train[i]).collect();
    picked.sort_unstable();
    picked
}

/// Per-epoch counts of site inclusions of `marked` nodes, and final test accuracy.
fn count_run(
    cfg: &ExperimentConfig,
    data: &Dataset,
    kind: &SamplerKind,
    marked: &[bool],
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let mut state = new_model(cfg, data, seed)?;
    let mut sampler = new_sampler(kind, data, seed, 1)?;
    let depth = cfg.model.depth;
    let mut counts = Vec::with_capacity(cfg.run.epochs);
    for epoch in 0..cfg.run.epochs {
        let mut c = 0usize;
        for batch in epoch_batches(&data.split.train, cfg.run.batch_size, seed, epoch) {
            sampler.begin_step();
            let plan = sampler.build_plan(&data.graph, &batch, depth)?;
            c += plan.all_sites().flat_map(|s| &s.ids).filter(|&&id| marked[id]).count();
            let labels = data.labels_of(plan.roots());
            let report = state.sgd_step(&data.graph, &plan, &labels)?;
            sampler.feedback(&data.graph, &plan, &report.trace)?;
        }
        counts.push(c as f64);
    }
    Ok((counts, data.accuracy(&state, &data.split.test)?))
}

/// For `[sampler]` (and `[baseline]` if given), trains once on clean features
/// and once with the marked nodes scaled, under the same seed.
pub fn run_norm_bias(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    if cfg.run.epochs == 0 {
        return Err(invalid!("norm_bias needs at least one epoch"));
    }
    let data = load_dataset(cfg)?;
    let mut kinds = vec![(cfg.sampler, cfg.sampler.algo.name().to_string())];
    if let Some(b) = cfg.baseline {
        let (x, y) = sampler_labels(&cfg.sampler, &b);
        kinds = vec![(cfg.sampler, x), (b, y)];
    }
    let per = per_trial(cfg.run.trials, |trial| {
        let seed = trial_seed(cfg.run.seed, trial);
        let nodes = corrupted_nodes(&data.split.train, cfg.graph.corrupt_fraction, seed);
        let mut marked = vec![false; data.graph.node_count()];
        nodes.iter().for_each(|&v| marked[v] = true);
        let scaled = Dataset { graph: data.graph.corrupt_features(&nodes, cfg.graph.corrupt_scale)?, ..data.clone() };
        let mut out = Vec::new();
        for (kind, label) in &kinds {
            for (variant, d) in [("unscaled", &data), ("scaled", &scaled)] {
                let (counts, acc) = count_run(cfg, d, kind, &marked, seed)?;
                for (e, c) in counts.iter().enumerate() {
                    out.push(ResultRecord::new(NAME, seed, e as u64 + 1, format!("{label}.{variant}.count"), *c));
                }
                let e = cfg.run.epochs as u64;
                out.push(ResultRecord::new(NAME, seed, e, format!("{label}.{variant}.mean_count"), mean(&counts)));
                out.push(ResultRecord::new(NAME, seed, e, format!("{label}.{variant}.test_acc"), acc));
            }
        }
        Ok(out)
    })?;
    let mut records: Vec<ResultRecord> = per.into_iter().flatten().collect();
    for (_, label) in &kinds {
        let pick = |variant: &str| -> Vec<f64> {
            let m = format!("{label}.{variant}.mean_count");
            records.iter().filter(|r| r.metric == m).map(|r| r.value).collect()
        };
        let (u, s) = (pick("unscaled"), pick("scaled"));
        let base = cfg.run.seed;
        records.push(ResultRecord::new(NAME, base, 0, format!("{label}.unscaled.trial_mean"), mean(&u)));
        records.push(ResultRecord::new(NAME, base, 0, format!("{label}.scaled.trial_mean"), mean(&s)));
        if u.len() >= 2 {
            let t = welch_t(&s, &u)?;
            records.push(ResultRecord::new(NAME, base, 0, format!("{label}.p_scaled_greater"), t.p_greater));
            records.push(ResultRecord::new(NAME, base, 0, format!("{label}.p_two_sided"), t.p_two_sided));
        }
    }
    Ok(records)
}
