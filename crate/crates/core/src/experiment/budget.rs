//! Reward-variation budget and boundedness monitors during real training.

use ndarray::Array1;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::sink::ResultRecord;
use crate::experiment::{epoch_batches, load_dataset, new_model, new_sampler, per_trial, trial_seed, Dataset};
use crate::gcn::{embedding_step, AssumptionMonitor, ForwardTrace, LrSchedule};
use crate::graph::SparseGraph;
use crate::plan::Site;
use crate::reward::relu_reward;
use crate::rng::{stream, Purpose};
use crate::sampler::reward_layer;

const NAME: &str = "budget_monitor";
const REL_TOL: f64 = 1e-9;

/// Clamped bias-variance rewards of every arm of every frozen probe site.
pub fn probe_rewards(g: &SparseGraph, probes: &[Site], trace: &ForwardTrace) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for site in probes {
        let below = site.layer - 1;
        let w = g.weights(site.root);
        let mut zs = Vec::with_capacity(site.ids.len());
        for (j, &id) in site.ids.iter().enumerate() {
            let h = trace
                .embedding(below, id)
                .ok_or_else(|| Error::Internal(format!("probe neighbor {id} missing from trace")))?;
            zs.push(&h * w[site.arms[j]]);
        }
        let mut m = Array1::<f64>::zeros(zs[0].len());
        for (z, &c) in zs.iter().zip(&site.counts) {
            m.scaled_add(f64::from(c), z);
        }
        m /= site.draws as f64;
        out.extend(zs.iter().map(|z| relu_reward(z.view(), m.view())));
    }
    Ok(out)
}

fn probe_roots(data: &Dataset, count: usize, seed: u64) -> Vec<usize> {
    let mut pool = data.split.train.clone();
    pool.shuffle(&mut stream(seed, Purpose::Probe, 0, 0));
    pool.truncate(count.max(1));
    pool
}

/// Trains with `alpha_t = base / t` for `steps` steps and tracks:
/// the running probe-reward variation against `base C_v ln t`, every sampler
/// reward against `3 (max ||z||)^2`, and each embedding step against its bound.
pub fn run_budget_monitor(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let LrSchedule::InverseT { base } = cfg.model.lr else {
        return Err(Error::Config("budget_monitor requires lr = inverse_t".into()));
    };
    if cfg.run.probes == 0 {
        return Err(Error::Config("budget_monitor needs probes >= 1".into()));
    }
    let data = load_dataset(cfg)?;
    let g = &data.graph;
    let depth = cfg.model.depth;
    let steps = if cfg.run.steps > 0 { cfg.run.steps } else { 500 };
    let per = per_trial(cfg.run.trials, |trial| {
        let seed = trial_seed(cfg.run.seed, trial);
        let mut state = new_model(cfg, &data, seed)?;
        let mut sampler = new_sampler(&cfg.sampler, &data, seed, 1)?;
        let mut monitor = AssumptionMonitor::new(&state);
        let roots = probe_roots(&data, cfg.run.probes, seed);
        let layer = reward_layer(depth);
        let probes: Vec<Site> = sampler.build_plan(g, &roots, depth)?.sites(layer).to_vec();
        let mut out = Vec::new();
        let mut batches = Vec::new();
        let mut epoch = 0;
        let (mut sum, mut prev): (f64, Option<Vec<f64>>) = (0.0, None);
        let mut max_z = 0.0f64;
        let (mut budget_bad, mut reward_bad, mut step_bad, mut reward_count) = (0u64, 0u64, 0u64, 0u64);
        let mut max_abs_reward = 0.0f64;
        let mut full_t = state.forward_full(g, &roots)?;
        for t in 1..=steps as u64 {
            let r_t = probe_rewards(g, &probes, &full_t)?;
            if let Some(p) = &prev {
                let var = r_t.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                sum += var;
                out.push(ResultRecord::new(NAME, seed, t, "variation", var));
            }
            let consts = monitor.bound_constants(g, state.activation());
            let bound = base * consts.variation_constant(1) * (t as f64).ln();
            let ok = sum <= bound * (1.0 + REL_TOL) + 1e-12;
            budget_bad += u64::from(!ok);
            out.push(ResultRecord::new(NAME, seed, t, "probe_reward_total", r_t.iter().sum()));
            out.push(ResultRecord::new(NAME, seed, t, "variation_sum", sum));
            out.push(ResultRecord::new(NAME, seed, t, "variation_bound", bound));
            out.push(ResultRecord::new(NAME, seed, t, "budget_ok", if ok { 1.0 } else { 0.0 }));
            prev = Some(r_t);

            if batches.is_empty() {
                batches = epoch_batches(&data.split.train, cfg.run.batch_size, seed, epoch);
                batches.reverse();
                epoch += 1;
            }
            let batch = batches.pop().unwrap();
            sampler.begin_step();
            let plan = sampler.build_plan(g, &batch, depth)?;
            let labels = data.labels_of(plan.roots());
            let alpha = state.learning_rate();
            let report = state.sgd_step(g, &plan, &labels)?;
            monitor.absorb(&report.delta);
            monitor.observe_trace(g, &report.trace);
            let fb = sampler.feedback(g, &plan, &report.trace)?;
            max_z = max_z.max(fb.max_z_norm);
            for &r in &fb.rewards {
                reward_count += 1;
                max_abs_reward = max_abs_reward.max(r.abs());
                if r.abs() > 3.0 * max_z * max_z * (1.0 + REL_TOL) {
                    reward_bad += 1;
                }
            }
            let full_t1 = state.forward_full(g, &roots)?;
            let consts = monitor.bound_constants(g, state.activation());
            for l in 1..depth {
                let d = embedding_step(g, &full_t, &full_t1, l)?;
                monitor.record_embedding_step(l, d);
                if d > consts.embedding_step_bound(l, alpha) * (1.0 + REL_TOL) + 1e-15 {
                    step_bad += 1;
                }
            }
            full_t = full_t1;
        }
        let consts = monitor.bound_constants(g, state.activation());
        let e = steps as u64;
        for (name, v) in [
            ("budget_violations", budget_bad as f64),
            ("reward_bound_violations", reward_bad as f64),
            ("embedding_step_violations", step_bad as f64),
            ("reward_count", reward_count as f64),
            ("max_abs_reward", max_abs_reward),
            ("max_z_norm", max_z),
            ("c_theta", consts.c_theta),
            ("c_g", consts.c_g),
            ("c_x", consts.c_x),
            ("c_v_bar", consts.variation_constant(1)),
        ] {
            out.push(ResultRecord::new(NAME, seed, e, name, v));
        }
        Ok(out)
    })?;
    Ok(per.into_iter().flatten().collect())
}
