//! Exp3 and Exp3.M policies, dependent rounding, weight updates and restarts.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{read_f64, read_u64};

pub const POLICY_MAGIC: &[u8; 4] = b"BPT1";
const OVERFLOW_LIMIT: f64 = 1e100;
const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BanditMode {
    /// One arm per draw, `k` independent draws.
    Exp3,
    /// `k` distinct arms per round via capping and dependent rounding.
    Exp3M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    weights: Vec<f64>,
    plays: usize,
    eta: f64,
    gamma: f64,
    epoch_len: Option<u64>,
    steps_since_reset: u64,
}

impl ArmState {
    pub fn new(arm_count: usize, plays: usize, eta: f64, gamma: f64, epoch_len: Option<u64>) -> Result<Self> {
        if arm_count == 0 {
            return Err(invalid!("need at least one arm"));
        }
        if plays == 0 || plays > arm_count {
            return Err(invalid!("plays must be in 1..={arm_count}, got {plays}"));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(invalid!("eta must be finite and >= 0, got {eta}"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(invalid!("gamma must be in [0, 1], got {gamma}"));
        }
        if epoch_len == Some(0) {
            return Err(invalid!("epoch length must be >= 1"));
        }
        Ok(ArmState { weights: vec![1.0; arm_count], plays, eta, gamma, epoch_len, steps_since_reset: 0 })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(invalid!("{} weights for {} arms", weights.len(), self.weights.len()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::NonFinite("weights must be positive and finite".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn arm_count(&self) -> usize {
        self.weights.len()
    }

    pub fn plays(&self) -> usize {
        self.plays
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epoch_len(&self) -> Option<u64> {
        self.epoch_len
    }

    pub fn steps_since_reset(&self) -> u64 {
        self.steps_since_reset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_weights(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::NonFinite(format!("arm weights {:?}", self.weights)));
        }
        Ok(())
    }

    /// `p_i = (1 - gamma) w_i / sum w + gamma / K`.
    pub fn exp3_policy(&self) -> Result<Vec<f64>> {
        self.check_weights()?;
        Ok(exp3_mix(&self.weights, self.gamma))
    }

    /// Inclusion probabilities summing to `k`, with the arms capped at 1.
    pub fn exp3m_policy(&self) -> Result<(Vec<f64>, Vec<bool>)> {
        self.check_weights()?;
        exp3m_policy(&self.weights, self.plays, self.gamma)
    }

    /// Draws a round under `mode`.
    pub fn draw<R: Rng + ?Sized>(&self, mode: BanditMode, rng: &mut R) -> Result<DrawOutcome> {
        match mode {
            BanditMode::Exp3 => {
                let p = self.exp3_policy()?;
                draw_repeated(&p, self.plays, rng)
            }
            BanditMode::Exp3M => {
                let (p, capped) = self.exp3m_policy()?;
                let sampled = depround(self.plays, &p, rng)?;
                Ok(DrawOutcome { counts: vec![1; sampled.len()], probabilities: p, capped, draws: self.plays, sampled })
            }
        }
    }

    /// `w_i <- w_i exp(eta r_i / p_i)` for sampled arms; capped arms are
    /// skipped in Exp3.M mode.
    pub fn update_weights(&mut self, outcome: &DrawOutcome, rewards: &[RewardRecord], mode: BanditMode) -> Result<()> {
        if outcome.probabilities.len() != self.arm_count() {
            return Err(invalid!(
                "outcome has {} probabilities for {} arms",
                outcome.probabilities.len(),
                self.arm_count()
            ));
        }
        if let Some(rec) = rewards.iter().find(|r| outcome.sampled.binary_search(&r.arm).is_err()) {
            return Err(invalid!("reward for unsampled arm {}", rec.arm));
        }
        let capped = |arm: usize| mode == BanditMode::Exp3M && outcome.capped.get(arm).copied().unwrap_or(false);
        self.apply_rewards(rewards, capped)
    }

    /// Multiplicative update for each record whose arm is not `skip`ped.
    pub fn apply_rewards(&mut self, rewards: &[RewardRecord], skip: impl Fn(usize) -> bool) -> Result<()> {
        let mut logs: Vec<(usize, f64)> = Vec::with_capacity(rewards.len());
        for rec in rewards {
            if rec.arm >= self.arm_count() {
                return Err(invalid!("arm {} outside {} arms", rec.arm, self.arm_count()));
            }
            if !(rec.prob > 0.0) {
                return Err(invalid!("reward for arm {} carries probability {}", rec.arm, rec.prob));
            }
            if !rec.reward.is_finite() {
                return Err(Error::NonFinite(format!("reward {} for arm {}", rec.reward, rec.arm)));
            }
            if skip(rec.arm) {
                continue;
            }
            let step = self.eta * rec.reward / rec.prob;
            if step == 0.0 {
                continue;
            }
            logs.push((rec.arm, self.weights[rec.arm].ln() + step));
        }
        let top_log = logs.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
        let top_old = self.weights.iter().copied().fold(0.0, f64::max).ln();
        let shift = top_log.max(top_old);
        if shift > OVERFLOW_LIMIT.ln() {
            for w in &mut self.weights {
                *w = (w.ln() - shift).exp().max(WEIGHT_FLOOR);
            }
            for (arm, l) in logs {
                self.weights[arm] = (l - shift).exp().max(WEIGHT_FLOOR);
            }
        } else {
            for (arm, l) in logs {
                self.weights[arm] = l.exp().max(WEIGHT_FLOOR);
            }
        }
        self.check_weights()
    }

    /// Resets every weight to 1 when `global_step` is a multiple of the epoch length.
    pub fn maybe_restart(&mut self, global_step: u64) -> bool {
        let Some(len) = self.epoch_len else {
            return false;
        };
        if global_step.is_multiple_of(len) {
            self.weights.iter_mut().for_each(|w| *w = 1.0);
            self.steps_since_reset = 0;
            true
        } else {
            self.steps_since_reset = global_step % len;
            false
        }
    }
}

/// Sampled arms of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawOutcome {
    /// Distinct arms, ascending.
    pub sampled: Vec<usize>,
    /// Draw multiplicity of each sampled arm.
    pub counts: Vec<u32>,
    /// Full policy at draw time.
    pub probabilities: Vec<f64>,
    /// Arms capped at probability 1 (Exp3.M only).
    pub capped: Vec<bool>,
    /// Number of draws, with multiplicity.
    pub draws: usize,
}

impl DrawOutcome {
    pub fn probability_of(&self, arm: usize) -> f64 {
        self.probabilities[arm]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRecord {
    pub arm: usize,
    pub reward: f64,
    /// Probability used for the importance weight.
    pub prob: f64,
}

fn exp3_mix(weights: &[f64], gamma: f64) -> Vec<f64> {
    let k = weights.len() as f64;
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (1.0 - gamma) * w / total + gamma / k).collect()
}

/// Exp3.M inclusion probabilities for `plays` arms out of `weights.len()`.
pub fn exp3m_policy(weights: &[f64], plays: usize, gamma: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = weights.len();
    if plays == 0 || plays > n {
        return Err(invalid!("plays must be in 1..={n}, got {plays}"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid!("gamma must be in [0, 1], got {gamma}"));
    }
    if plays == n {
        return Ok((vec![1.0; n], vec![false; n]));
    }
    let nk = n as f64;
    let kk = plays as f64;
    if gamma >= 1.0 {
        return Ok((vec![kk / nk; n], vec![false; n]));
    }
    let ratio = (1.0 / kk - gamma / nk) / (1.0 - gamma);
    let total: f64 = weights.iter().sum();
    let top = weights.iter().copied().fold(0.0, f64::max);
    let mut capped = vec![false; n];
    let mut eff = weights.to_vec();
    if top >= ratio * total {
        let cap = solve_cap(weights, ratio)?;
        for i in 0..n {
            if weights[i] >= cap {
                capped[i] = true;
                eff[i] = cap;
            }
        }
    }
    let eff_total: f64 = eff.iter().sum();
    let mut p: Vec<f64> = (0..n)
        .map(|i| if capped[i] { 1.0 } else { (kk * ((1.0 - gamma) * eff[i] / eff_total + gamma / nk)).min(1.0) })
        .collect();
    let m = capped.iter().filter(|&&c| c).count();
    if m > 0 {
        // free arms carry exactly k - m
        let free: f64 = (0..n).filter(|&i| !capped[i]).map(|i| p[i]).sum();
        if free > 0.0 {
            let scale = (kk - m as f64) / free;
            for i in (0..n).filter(|&i| !capped[i]) {
                p[i] = (p[i] * scale).min(1.0);
            }
        }
    }
    Ok((p, capped))
}

/// Solves `a / sum_i min(w_i, a) = ratio` for the cap `a`.
fn solve_cap(weights: &[f64], ratio: f64) -> Result<f64> {
    let n = weights.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + sorted[i];
    }
    for m in 1..n {
        let rest = tail[m];
        let denom = 1.0 - m as f64 * ratio;
        if denom <= 0.0 {
            break;
        }
        let cap = ratio * rest / denom;
        let tol = 1e-12 * cap;
        if sorted[m - 1] + tol >= cap && cap + tol >= sorted[m] {
            return Ok(cap);
        }
    }
    let f = |a: f64| a / weights.iter().map(|w| w.min(a)).sum::<f64>();
    let (mut lo, mut hi) = (sorted[n - 1], sorted[0]);
    if f(hi) < ratio {
        return Err(Error::Internal(format!("capping equation has no root for ratio {ratio}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `k` independent draws from `p`; duplicates are collapsed with counts.
pub fn draw_repeated<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> Result<DrawOutcome> {
    let dist = WeightedIndex::new(p).map_err(|e| invalid!("bad policy {p:?}: {e}"))?;
    let mut counts = vec![0u32; p.len()];
    for _ in 0..k {
        counts[dist.sample(rng)] += 1;
    }
    let sampled: Vec<usize> = (0..p.len()).filter(|&i| counts[i] > 0).collect();
    Ok(DrawOutcome {
        counts: sampled.iter().map(|&i| counts[i]).collect(),
        sampled,
        probabilities: p.to_vec(),
        capped: vec![false; p.len()],
        draws: k,
    })
}

/// Dependent rounding of inclusion probabilities summing to `k`.
///
/// Returns exactly `k` distinct indices, ascending, with marginal inclusion
/// probabilities equal to `p`.
pub fn depround<R: Rng + ?Sized>(k: usize, p: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let total: f64 = p.iter().sum();
    if (total - k as f64).abs() > 1e-9 {
        return Err(invalid!("probabilities sum to {total}, expected {k}"));
    }
    if p.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
        return Err(invalid!("probabilities must lie in [0, 1]"));
    }
    const EPS: f64 = 1e-12;
    let mut q: Vec<f64> = p.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
    let mut open: Vec<usize> = (0..q.len()).filter(|&i| q[i] > EPS && q[i] < 1.0 - EPS).collect();
    while open.len() >= 2 {
        let (i, j) = (open[open.len() - 2], open[open.len() - 1]);
        let alpha = (1.0 - q[i]).min(q[j]);
        let beta = q[i].min(1.0 - q[j]);
        if rng.random::<f64>() * (alpha + beta) < beta {
            q[i] += alpha;
            q[j] -= alpha;
        } else {
            q[i] -= beta;
            q[j] += beta;
        }
        for idx in [j, i] {
            if q[idx] <= EPS || q[idx] >= 1.0 - EPS {
                let pos = open.iter().position(|&x| x == idx).unwrap();
                open.remove(pos);
            }
        }
    }
    let chosen: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0.5).collect();
    if chosen.len() != k {
        return Err(Error::Internal(format!("rounding produced {} arms, expected {k}", chosen.len())));
    }
    Ok(chosen)
}

/// Closed-form Rexp3 tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestartParams {
    pub eta: f64,
    pub gamma: f64,
    pub delta_t: u64,
}

/// `eta`, `gamma` tuned for horizon `horizon` and the restart period `Delta_T`.
pub fn restart_hyperparams(c_r: f64, arms: usize, plays: usize, horizon: u64, c_v_bar: f64) -> Result<RestartParams> {
    if arms < 2 || horizon < arms as u64 {
        return Err(invalid!("need horizon >= arms >= 2, got T={horizon}, K={arms}"));
    }
    if plays == 0 || plays > arms {
        return Err(invalid!("plays must be in 1..={arms}, got {plays}"));
    }
    if !(c_r > 0.0) || !(c_v_bar > 0.0) {
        return Err(invalid!("reward bound and variation constant must be > 0"));
    }
    let (eta, gamma) = tuned_rates(c_r, arms, plays, horizon)?;
    let kk = arms as f64;
    let t = horizon as f64;
    let delta = (c_v_bar * t.ln()).powf(-2.0 / 3.0) * (kk * kk.ln()).powf(1.0 / 3.0) * t.powf(2.0 / 3.0);
    if !delta.is_finite() {
        return Err(invalid!("restart period is not finite; ln T must be > 0"));
    }
    Ok(RestartParams { eta, gamma, delta_t: (delta.ceil() as u64).max(1) })
}

/// `eta = sqrt(2k ln(K/k) / (C_r (e^C_r - 1) K T))` and
/// `gamma = min(1, sqrt((e^C_r - 1) K ln(K/k) / (2 k^2 C_r T)))`.
pub fn tuned_rates(c_r: f64, arms: usize, plays: usize, horizon: u64) -> Result<(f64, f64)> {
    if c_r > 700.0 {
        return Err(invalid!("reward bound {c_r} overflows exp; rescale rewards below 700"));
    }
    let kk = arms as f64;
    let k = plays as f64;
    let t = horizon as f64;
    let em1 = c_r.exp_m1();
    let log_ratio = (kk / k).ln();
    let eta = (2.0 * k * log_ratio / (c_r * em1 * kk * t)).sqrt();
    let gamma = (em1 * kk * log_ratio / (2.0 * k * k * c_r * t)).sqrt().min(1.0);
    Ok((eta, gamma))
}

/// Per-node bandit rows, created on first write.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    rows: Vec<Option<ArmState>>,
    plays: usize,
    eta: f64,
    gamma: f64,
    epoch_len: Option<u64>,
}

impl PolicyTable {
    pub fn new(node_count: usize, plays: usize, eta: f64, gamma: f64, epoch_len: Option<u64>) -> Result<Self> {
        ArmState::new(plays.max(1), plays.max(1), eta, gamma, epoch_len)?;
        Ok(PolicyTable { rows: vec![None; node_count], plays, eta, gamma, epoch_len })
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn materialized(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn plays(&self) -> usize {
        self.plays
    }

    pub fn epoch_len(&self) -> Option<u64> {
        self.epoch_len
    }

    pub fn get(&self, node: usize) -> Option<&ArmState> {
        self.rows.get(node).and_then(|r| r.as_ref())
    }

    /// The node's row, or a fresh all-ones state if untouched.
    pub fn view(&self, node: usize, degree: usize) -> Result<std::borrow::Cow<'_, ArmState>> {
        match self.get(node) {
            Some(s) if s.arm_count() == degree => Ok(std::borrow::Cow::Borrowed(s)),
            Some(s) => Err(invalid!("row {node} has {} arms but degree is {degree}", s.arm_count())),
            None => Ok(std::borrow::Cow::Owned(self.fresh(degree)?)),
        }
    }

    pub fn row_mut(&mut self, node: usize, degree: usize) -> Result<&mut ArmState> {
        if node >= self.rows.len() {
            return Err(Error::UnknownNode(node));
        }
        if self.rows[node].is_none() {
            self.rows[node] = Some(self.fresh(degree)?);
        }
        let row = self.rows[node].as_mut().unwrap();
        if row.arm_count() != degree {
            return Err(invalid!("row {node} has {} arms but degree is {degree}", row.arm_count()));
        }
        Ok(row)
    }

    fn fresh(&self, degree: usize) -> Result<ArmState> {
        ArmState::new(degree, self.plays.min(degree), self.eta, self.gamma, self.epoch_len)
    }

    /// Applies the periodic reset to every materialized row.
    pub fn maybe_restart(&mut self, global_step: u64) -> bool {
        for row in self.rows.iter_mut().flatten() {
            row.maybe_restart(global_step);
        }
        self.epoch_len.is_some_and(|len| global_step.is_multiple_of(len))
    }

    /// Writes the `BPT1` snapshot; untouched rows have zero arms.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(POLICY_MAGIC)?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for row in &self.rows {
            match row {
                None => {
                    w.write_all(&0u64.to_le_bytes())?;
                    w.write_all(&0u64.to_le_bytes())?;
                }
                Some(s) => {
                    w.write_all(&(s.arm_count() as u64).to_le_bytes())?;
                    for x in &s.weights {
                        w.write_all(&x.to_le_bytes())?;
                    }
                    w.write_all(&s.steps_since_reset.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads a snapshot; hyperparameters come from the caller.
    pub fn read_snapshot<R: Read>(
        mut r: R,
        plays: usize,
        eta: f64,
        gamma: f64,
        epoch_len: Option<u64>,
    ) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != POLICY_MAGIC {
            return Err(Error::Format("bad policy snapshot magic".into()));
        }
        let n = read_u64(&mut r)?;
        if n > 1 << 40 {
            return Err(Error::Format(format!("implausible node count {n}")));
        }
        let mut table = PolicyTable::new(n as usize, plays, eta, gamma, epoch_len)?;
        for v in 0..n as usize {
            let arms = read_u64(&mut r)? as usize;
            if arms > 1 << 32 {
                return Err(Error::Format(format!("implausible arm count {arms}")));
            }
            let weights = (0..arms).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            let steps = read_u64(&mut r)?;
            if arms > 0 {
                let mut s = table.fresh(arms)?.with_weights(weights).map_err(|e| Error::Format(e.to_string()))?;
                s.steps_since_reset = steps;
                table.rows[v] = Some(s);
            }
        }
        Ok(table)
    }
}
