//! Aggregation error of two samplers against the exact aggregate.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::sink::ResultRecord;
use crate::experiment::{epoch_batches, load_dataset, new_model, new_sampler, per_trial, require_baseline, trial_seed};
use crate::gcn::ForwardTrace;
use crate::graph::SparseGraph;
use crate::plan::SamplingPlan;
use crate::sampler::reward_layer;
use crate::stats::{mean, sample_sd};

const NAME: &str = "approx_error";

/// `sum_v ||mu_hat_v - mu_v||` over the reward-layer sites, with `mu_hat`
/// built from the plan's sample of exact lower-layer embeddings.
pub fn aggregation_error(g: &SparseGraph, plan: &SamplingPlan, exact: &ForwardTrace) -> Result<f64> {
    let layer = reward_layer(plan.depth());
    let mut total = 0.0;
    for site in plan.sites(layer) {
        let mu = exact
            .aggregate(layer, site.root)
            .ok_or_else(|| Error::Internal(format!("no exact aggregate for {}", site.root)))?;
        let mut est = Array1::<f64>::zeros(mu.len());
        for (id, c) in site.coefficients(g)? {
            let h = exact
                .embedding(layer - 1, id)
                .ok_or_else(|| Error::Internal(format!("no exact embedding for {id}")))?;
            est.scaled_add(c, &h);
        }
        let diff = &est - &mu;
        total += diff.dot(&diff).sqrt();
    }
    Ok(total)
}

/// Shares one set of weights, trained on exact aggregation, between the
/// `[sampler]` and `[baseline]` samplers and accumulates
/// `delta_dist = sum dist_sampler - sum dist_baseline`.
pub fn run_approx_error(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let ours_kind = cfg.sampler;
    let theirs_kind = require_baseline(cfg)?;
    let data = load_dataset(cfg)?;
    let depth = cfg.model.depth;
    let per = per_trial(cfg.run.trials, |trial| {
        let seed = trial_seed(cfg.run.seed, trial);
        let mut state = new_model(cfg, &data, seed)?;
        let mut ours = new_sampler(&ours_kind, &data, seed, 1)?;
        let mut theirs = new_sampler(&theirs_kind, &data, seed, 2)?;
        let mut out = Vec::new();
        let (mut sum_ours, mut sum_theirs) = (0.0, 0.0);
        let mut step = 0u64;
        for epoch in 0..cfg.run.epochs {
            for batch in epoch_batches(&data.split.train, cfg.run.batch_size, seed, epoch) {
                step += 1;
                let exact_plan = SamplingPlan::full(&data.graph, &batch, depth)?;
                let labels = data.labels_of(exact_plan.roots());
                let report = state.sgd_step(&data.graph, &exact_plan, &labels)?;
                let exact = &report.trace;
                let mut dists = [0.0; 2];
                for (slot, sampler) in [&mut ours, &mut theirs].into_iter().enumerate() {
                    sampler.begin_step();
                    let plan = sampler.build_plan(&data.graph, &batch, depth)?;
                    dists[slot] = aggregation_error(&data.graph, &plan, exact)?;
                    sampler.feedback(&data.graph, &plan, exact)?;
                }
                sum_ours += dists[0];
                sum_theirs += dists[1];
                out.push(ResultRecord::new(NAME, seed, step, "dist_our", dists[0]));
                out.push(ResultRecord::new(NAME, seed, step, "dist_bs", dists[1]));
                out.push(ResultRecord::new(NAME, seed, step, "delta_dist", sum_ours - sum_theirs));
            }
        }
        out.push(ResultRecord::new(NAME, seed, step, "final_delta_dist", sum_ours - sum_theirs));
        Ok(out)
    })?;
    let finals: Vec<f64> = per.iter().filter_map(|recs| recs.last().map(|r| r.value)).collect();
    let mut records: Vec<ResultRecord> = per.into_iter().flatten().collect();
    records.push(ResultRecord::new(NAME, cfg.run.seed, 0, "mean_delta_dist", mean(&finals)));
    records.push(ResultRecord::new(NAME, cfg.run.seed, 0, "sd_delta_dist", sample_sd(&finals)));
    Ok(records)
}
