//! Synthetic drifting bandit environments and regret measurement.
//!
//! Means are known to the lab, so oracle payoffs are exact expectations while
//! the policy's payoff comes from its realized draws.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use crate::bandit::{depround, exp3m_policy, restart_hyperparams, tuned_rates};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    None,
    /// Uniform on `[-half_width, half_width]`, then clipped to `[0, cap]`.
    BoundedUniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvSpec {
    /// Phase-shifted sinusoids scaled to a total variation of `budget`.
    Sinusoidal { budget: f64 },
    /// One arm pays `1 + gap`, the rest pay 1; the leader rotates at
    /// `num_changes` evenly spaced switch points.
    PiecewiseConstant { num_changes: usize, gap: f64 },
    /// Triangle waves whose step-`t` variation is `c_v_bar ln T / (H_{T-1} t)`,
    /// so the total is `c_v_bar ln T`.
    LogDecay { c_v_bar: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftEnvironment {
    arm_count: usize,
    plays: usize,
    horizon: usize,
    /// `K x T`.
    means: Array2<f64>,
    noise: Noise,
    cap: f64,
    realized_budget: f64,
    target_budget: f64,
}

impl DriftEnvironment {
    pub fn from_means(means: Array2<f64>, plays: usize, noise: Noise, cap: f64) -> Result<Self> {
        let (arm_count, horizon) = means.dim();
        if arm_count < 2 || horizon < arm_count {
            return Err(invalid!("need T >= K >= 2, got K={arm_count}, T={horizon}"));
        }
        if plays == 0 || plays > arm_count {
            return Err(invalid!("plays must be in 1..={arm_count}"));
        }
        if means.iter().any(|&m| !(0.0..=cap).contains(&m)) {
            return Err(invalid!("means must lie in [0, {cap}]"));
        }
        if let Noise::BoundedUniform(h) = noise {
            if !(h >= 0.0) {
                return Err(invalid!("noise half-width must be >= 0"));
            }
        }
        let realized_budget = variation_of(&means);
        Ok(DriftEnvironment {
            arm_count,
            plays,
            horizon,
            means,
            noise,
            cap,
            realized_budget,
            target_budget: realized_budget,
        })
    }

    pub fn arm_count(&self) -> usize {
        self.arm_count
    }

    pub fn plays(&self) -> usize {
        self.plays
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn mean(&self, arm: usize, t: usize) -> f64 {
        self.means[[arm, t]]
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn realized_budget(&self) -> f64 {
        self.realized_budget
    }

    pub fn target_budget(&self) -> f64 {
        self.target_budget
    }

    /// `V_T / ln T`, the variation constant implied by the budget.
    pub fn variation_constant(&self) -> f64 {
        self.realized_budget / (self.horizon as f64).ln()
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    fn realize<R: Rng>(&self, arm: usize, t: usize, rng: &mut R) -> f64 {
        let m = self.means[[arm, t]];
        match self.noise {
            Noise::None => m,
            Noise::BoundedUniform(h) if h > 0.0 => (m + rng.random_range(-h..=h)).clamp(0.0, self.cap),
            Noise::BoundedUniform(_) => m,
        }
    }

    /// Sum of the `k` largest means at step `t`.
    pub fn dynamic_oracle(&self, t: usize) -> f64 {
        let mut col: Vec<f64> = self.means.column(t).to_vec();
        col.sort_by(|a, b| b.total_cmp(a));
        col[..self.plays].iter().sum()
    }

    /// Best fixed set of `k` arms over the whole horizon.
    pub fn static_best_set(&self) -> Vec<usize> {
        let totals: Vec<f64> = self.means.rows().into_iter().map(|r| r.sum()).collect();
        let mut order: Vec<usize> = (0..self.arm_count).collect();
        order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
        let mut best = order[..self.plays].to_vec();
        best.sort_unstable();
        best
    }
}

/// `sum_t max_i |m_{i,t+1} - m_{i,t}|`.
pub fn variation_of(means: &Array2<f64>) -> f64 {
    let t = means.ncols();
    (1..t)
        .map(|s| means.column(s).iter().zip(means.column(s - 1).iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .sum()
}

pub fn make_environment(
    spec: EnvSpec,
    arms: usize,
    plays: usize,
    horizon: usize,
    cap: f64,
    seed: u64,
) -> Result<DriftEnvironment> {
    if arms < 2 || horizon < arms {
        return Err(invalid!("need T >= K >= 2, got K={arms}, T={horizon}"));
    }
    if !(cap > 0.0) {
        return Err(invalid!("cap must be > 0"));
    }
    let mut rng = stream(seed, Purpose::Environment, 0, 0);
    let (means, target) = match spec {
        EnvSpec::PiecewiseConstant { num_changes, gap } => {
            if !(gap >= 0.0) || 1.0 + gap > cap {
                return Err(invalid!("gap {gap} does not fit under cap {cap}"));
            }
            if num_changes + 1 > horizon {
                return Err(invalid!("{num_changes} changes do not fit in {horizon} steps"));
            }
            let segments = num_changes + 1;
            let means = Array2::from_shape_fn((arms, horizon), |(i, t)| {
                let seg = t * segments / horizon;
                if seg % arms == i {
                    1.0 + gap
                } else {
                    1.0
                }
            });
            (means, num_changes as f64 * gap)
        }
        EnvSpec::Sinusoidal { budget } => {
            if !(budget >= 0.0) {
                return Err(invalid!("budget must be >= 0"));
            }
            let cycles = (budget / (1.6 * cap)).ceil().max(1.0);
            if cycles * 8.0 > horizon as f64 {
                return Err(invalid!("budget {budget} needs {cycles} cycles, too many for {horizon} steps"));
            }
            let offset: f64 = rng.random();
            let raw = Array2::from_shape_fn((arms, horizon), |(i, t)| {
                (2.0 * PI * (cycles * t as f64 / horizon as f64 + offset + i as f64 / arms as f64)).sin()
            });
            let unit = variation_of(&raw);
            let amp = if budget == 0.0 { 0.0 } else { budget / unit };
            if amp > cap / 2.0 {
                return Err(invalid!("budget {budget} needs amplitude {amp} above cap/2"));
            }
            (raw.mapv(|x| cap / 2.0 + amp * x), budget)
        }
        EnvSpec::LogDecay { c_v_bar } => {
            if !(c_v_bar > 0.0) {
                return Err(invalid!("c_v_bar must be > 0"));
            }
            let ln_t = (horizon as f64).ln();
            let harmonic: f64 = (1..horizon).map(|t| 1.0 / t as f64).sum();
            let scale = c_v_bar * ln_t / harmonic;
            let offset: f64 = rng.random();
            let mut phase = offset;
            let mut means = Array2::zeros((arms, horizon));
            for t in 0..horizon {
                if t > 0 {
                    phase += scale / t as f64 / (2.0 * cap);
                }
                for i in 0..arms {
                    means[[i, t]] = cap * triangle(phase + i as f64 / arms as f64);
                }
            }
            (means, c_v_bar * ln_t)
        }
    };
    let mut env = DriftEnvironment::from_means(means, plays, Noise::None, cap)?;
    if (env.realized_budget - target).abs() > 0.01 * target.max(1e-300) && target > 0.0 {
        return Err(invalid!(
            "realized budget {} misses target {target} by more than 1%; raise the cap or the arm count",
            env.realized_budget
        ));
    }
    env.target_budget = target;
    Ok(env)
}

/// Period-1 triangle wave with range `[0, 1]`.
fn triangle(x: f64) -> f64 {
    let f = x.rem_euclid(1.0);
    if f < 0.5 {
        2.0 * f
    } else {
        2.0 - 2.0 * f
    }
}

/// How automatic Rexp3 picks its learning rate and exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tuning {
    /// Closed-form rates at the full horizon `T`.
    Horizon,
    /// Closed-form rates at the restart period, the length each run of
    /// Exp3.M actually lasts.
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegretPolicy {
    /// Restart period, rates and exploration from the environment's constants.
    Rexp3Auto(Tuning),
    Rexp3Manual {
        eta: f64,
        gamma: f64,
        delta_t: u64,
    },
    /// Horizon-tuned Exp3.M that never restarts.
    Exp3mNoRestart,
    UniformRandom,
}

impl RegretPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            RegretPolicy::Rexp3Auto(Tuning::Horizon) => "rexp3_auto_horizon",
            RegretPolicy::Rexp3Auto(Tuning::Epoch) => "rexp3_auto",
            RegretPolicy::Rexp3Manual { .. } => "rexp3_manual",
            RegretPolicy::Exp3mNoRestart => "exp3m_no_restart",
            RegretPolicy::UniformRandom => "uniform_random",
        }
    }
}

/// Resolved Exp3.M settings for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedParams {
    pub eta: f64,
    pub gamma: f64,
    pub delta_t: Option<u64>,
}

pub fn resolve_params(env: &DriftEnvironment, policy: RegretPolicy) -> Result<Option<ResolvedParams>> {
    let (arms, plays, horizon) = (env.arm_count, env.plays, env.horizon as u64);
    let c_r = env.cap;
    Ok(match policy {
        RegretPolicy::UniformRandom => None,
        RegretPolicy::Rexp3Manual { eta, gamma, delta_t } => {
            if delta_t == 0 {
                return Err(invalid!("delta_t must be >= 1"));
            }
            Some(ResolvedParams { eta, gamma, delta_t: Some(delta_t) })
        }
        RegretPolicy::Exp3mNoRestart => {
            let (eta, gamma) = tuned_rates(c_r, arms, plays, horizon)?;
            Some(ResolvedParams { eta, gamma, delta_t: None })
        }
        RegretPolicy::Rexp3Auto(tuning) => {
            let c_v = env.variation_constant().max(1e-12);
            let p = restart_hyperparams(c_r, arms, plays, horizon, c_v)?;
            let delta = p.delta_t.min(horizon);
            let (eta, gamma) = match tuning {
                Tuning::Horizon => (p.eta, p.gamma),
                Tuning::Epoch => tuned_rates(c_r, arms, plays, delta.max(arms as u64))?,
            };
            Some(ResolvedParams { eta, gamma, delta_t: Some(delta) })
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub policy_payoff: Vec<f64>,
    pub dynamic_oracle: Vec<f64>,
    pub weak_oracle: Vec<f64>,
    pub static_best_set: Vec<usize>,
    pub cumulative_dynamic_regret: f64,
    pub cumulative_weak_regret: f64,
}

impl RegretTrace {
    /// Rows `t,policy_payoff,dynamic_oracle,weak_oracle,cum_R,cum_Rhat`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,policy_payoff,dynamic_oracle,weak_oracle,cum_R,cum_Rhat")?;
        let (mut cr, mut cw) = (0.0, 0.0);
        for t in 0..self.policy_payoff.len() {
            cr += self.dynamic_oracle[t] - self.policy_payoff[t];
            cw += self.weak_oracle[t] - self.policy_payoff[t];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t + 1,
                self.policy_payoff[t],
                self.dynamic_oracle[t],
                self.weak_oracle[t],
                cr,
                cw
            )?;
        }
        Ok(())
    }
}

pub fn run_policy(env: &DriftEnvironment, policy: RegretPolicy, seed: u64) -> Result<RegretTrace> {
    let params = resolve_params(env, policy)?;
    let (arms, plays, horizon) = (env.arm_count, env.plays, env.horizon);
    let mut draw_rng = stream(seed, Purpose::Policy, 0, 0);
    let mut noise_rng = stream(seed, Purpose::Environment, 1, 0);
    let best = env.static_best_set();
    let mut payoff = Vec::with_capacity(horizon);
    let mut dynamic = Vec::with_capacity(horizon);
    let mut weak = Vec::with_capacity(horizon);
    let mut log_w = vec![0.0f64; arms];
    let mut weights = vec![1.0f64; arms];
    for t in 0..horizon {
        let step = t as u64 + 1;
        let (chosen, policy) = match params {
            None => {
                let mut s = index::sample(&mut draw_rng, arms, plays).into_vec();
                s.sort_unstable();
                (s, None)
            }
            Some(p) => {
                if p.delta_t.is_some_and(|d| step.is_multiple_of(d)) {
                    log_w.iter_mut().for_each(|l| *l = 0.0);
                }
                let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (w, l) in weights.iter_mut().zip(&log_w) {
                    *w = (l - top).exp().max(1e-300);
                }
                let (probs, capped) = exp3m_policy(&weights, plays, p.gamma.min(1.0))?;
                (depround(plays, &probs, &mut draw_rng)?, Some((p.eta, probs, capped)))
            }
        };
        let mut got = 0.0;
        for &i in &chosen {
            let r = env.realize(i, t, &mut noise_rng);
            got += r;
            if let Some((eta, probs, capped)) = &policy {
                if !capped[i] {
                    log_w[i] += eta * r / probs[i];
                }
            }
        }
        payoff.push(got);
        dynamic.push(env.dynamic_oracle(t));
        weak.push(best.iter().map(|&i| env.mean(i, t)).sum());
    }
    let total_pay: f64 = payoff.iter().sum();
    let cumulative_dynamic_regret = dynamic.iter().sum::<f64>() - total_pay;
    let cumulative_weak_regret = weak.iter().sum::<f64>() - total_pay;
    if !cumulative_dynamic_regret.is_finite() {
        return Err(Error::NonFinite("regret".into()));
    }
    Ok(RegretTrace {
        policy_payoff: payoff,
        dynamic_oracle: dynamic,
        weak_oracle: weak,
        static_best_set: best,
        cumulative_dynamic_regret,
        cumulative_weak_regret,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `ln R` on `ln T`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(invalid!("need at least 4 horizons, got {}", points.len()));
    }
    if let Some(&(t, r)) = points.iter().find(|&&(t, r)| !(t > 0.0) || !(r > 0.0)) {
        return Err(invalid!(
            "regret {r} at T={t} is not positive; the policy matched the oracle within noise, use more seeds"
        ));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid!("horizons must differ"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingFit { slope, intercept, r_squared })
}
