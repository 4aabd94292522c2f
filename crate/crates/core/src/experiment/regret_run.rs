//! Regret of bandit policies on synthetic drifting environments.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::sink::ResultRecord;
use crate::experiment::trial_seed;
use crate::regret::{fit_scaling_exponent, make_environment, run_policy};
use crate::stats::{mean, sample_sd};

const NAME: &str = "regret_scaling";

/// Per-seed and mean regret for every (policy, horizon); a log-log slope per
/// policy when at least four horizons are configured.
pub fn run_regret_scaling(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let rc = cfg.regret.as_ref().ok_or_else(|| Error::Config("regret_scaling needs a [regret] section".into()))?;
    let base = cfg.run.seed;
    let mut records = Vec::new();
    for policy in &rc.policies {
        let name = policy.name();
        let mut points = Vec::new();
        for &horizon in &rc.horizons {
            let runs: Vec<(u64, f64, f64, f64)> = (0..cfg.run.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = trial_seed(base, trial);
                    let env = make_environment(rc.env, rc.arms, rc.plays, horizon, rc.cap, seed)?.with_noise(rc.noise);
                    let tr = run_policy(&env, *policy, seed)?;
                    Ok((seed, tr.cumulative_dynamic_regret, tr.cumulative_weak_regret, env.realized_budget()))
                })
                .collect::<Result<_>>()?;
            let t = horizon as u64;
            for &(seed, r, w, b) in &runs {
                records.push(ResultRecord::new(NAME, seed, t, format!("dynamic_regret.{name}"), r));
                records.push(ResultRecord::new(NAME, seed, t, format!("weak_regret.{name}"), w));
                records.push(ResultRecord::new(NAME, seed, t, format!("realized_budget.{name}"), b));
            }
            let rs: Vec<f64> = runs.iter().map(|x| x.1).collect();
            let m = mean(&rs);
            records.push(ResultRecord::new(NAME, base, t, format!("mean_dynamic_regret.{name}"), m));
            records.push(ResultRecord::new(NAME, base, t, format!("sd_dynamic_regret.{name}"), sample_sd(&rs)));
            let ws: Vec<f64> = runs.iter().map(|x| x.2).collect();
            records.push(ResultRecord::new(NAME, base, t, format!("mean_weak_regret.{name}"), mean(&ws)));
            points.push((horizon as f64, m));
        }
        if points.len() >= 4 {
            let fit = fit_scaling_exponent(&points)?;
            records.push(ResultRecord::new(NAME, base, 0, format!("slope.{name}"), fit.slope));
            records.push(ResultRecord::new(NAME, base, 0, format!("intercept.{name}"), fit.intercept));
            records.push(ResultRecord::new(NAME, base, 0, format!("r_squared.{name}"), fit.r_squared));
        }
    }
    Ok(records)
}
