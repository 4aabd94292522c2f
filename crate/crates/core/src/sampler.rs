//! Neighbor samplers as training-loop plug-ins.
//!
//! Each step: [`Sampler::begin_step`] applies any scheduled restart,
//! [`Sampler::build_plan`] draws every aggregation site from the per-node
//! policies, and [`Sampler::feedback`] turns the resulting forward trace into
//! rewards for the sites that consume first-layer embeddings.

use ndarray::Array1;
use rand::seq::index;

use crate::bandit::{BanditMode, PolicyTable, RewardRecord};
use crate::error::{invalid, Error, Result};
use crate::gcn::ForwardTrace;
use crate::graph::SparseGraph;
use crate::plan::{EstimatorMode, SamplingPlan, Site};
use crate::reward::{relu_reward, reward_banditsampler};
use crate::rng::{mix, stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerAlgo {
    /// `k` neighbors without replacement, fixed policy.
    Uniform,
    /// Exp3 with the variance-gradient reward.
    BanditSampler,
    /// Exp3 with repeated draws and the clamped bias-variance reward.
    Thanos,
    /// Exp3.M with dependent rounding and the clamped bias-variance reward.
    ThanosM,
}

impl SamplerAlgo {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerAlgo::Uniform),
            "banditsampler" => Ok(SamplerAlgo::BanditSampler),
            "thanos" => Ok(SamplerAlgo::Thanos),
            "thanos_m" => Ok(SamplerAlgo::ThanosM),
            _ => Err(Error::Config(format!("unknown sampler {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerAlgo::Uniform => "uniform",
            SamplerAlgo::BanditSampler => "banditsampler",
            SamplerAlgo::Thanos => "thanos",
            SamplerAlgo::ThanosM => "thanos_m",
        }
    }

    pub fn default_estimator(self) -> EstimatorMode {
        match self {
            SamplerAlgo::BanditSampler | SamplerAlgo::Uniform => EstimatorMode::Unbiased,
            SamplerAlgo::Thanos | SamplerAlgo::ThanosM => EstimatorMode::Biased,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerKind {
    pub algo: SamplerAlgo,
    pub k: usize,
    pub eta: f64,
    pub gamma: f64,
    /// Restart period; `None` disables restarts.
    pub delta_t: Option<u64>,
    pub estimator: EstimatorMode,
}

impl SamplerKind {
    pub fn new(algo: SamplerAlgo, k: usize, eta: f64, gamma: f64, delta_t: Option<u64>) -> Self {
        SamplerKind { algo, k, eta, gamma, delta_t, estimator: algo.default_estimator() }
    }

    pub fn with_estimator(mut self, estimator: EstimatorMode) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn uses_rexp3(&self) -> bool {
        self.delta_t.is_some()
    }

    pub fn mode(&self) -> BanditMode {
        match self.algo {
            SamplerAlgo::ThanosM => BanditMode::Exp3M,
            _ => BanditMode::Exp3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid!("k must be >= 1"));
        }
        if self.estimator == EstimatorMode::Exact {
            return Err(invalid!("samplers use the biased or unbiased estimator"));
        }
        if self.algo != SamplerAlgo::Uniform {
            if !(self.eta > 0.0) || !self.eta.is_finite() {
                return Err(invalid!("eta must be > 0, got {}", self.eta));
            }
            if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                return Err(invalid!("gamma must be in (0, 1], got {}", self.gamma));
            }
        }
        if self.delta_t == Some(0) {
            return Err(invalid!("delta_t must be >= 1 when set"));
        }
        Ok(())
    }
}

/// Rewards gathered by one feedback call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackReport {
    /// One entry per distinct sampled arm at every reward site.
    pub rewards: Vec<f64>,
    /// Largest `||z_i||` among the rewarded arms.
    pub max_z_norm: f64,
}

/// A sampler with its policy table and step counter.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
    policies: PolicyTable,
    seed: u64,
    step: u64,
}

impl Sampler {
    pub fn new(kind: SamplerKind, node_count: usize, seed: u64) -> Result<Self> {
        kind.validate()?;
        let eta = if kind.algo == SamplerAlgo::Uniform { 0.0 } else { kind.eta };
        let gamma = kind.gamma.clamp(0.0, 1.0);
        Ok(Sampler { kind, policies: PolicyTable::new(node_count, kind.k, eta, gamma, kind.delta_t)?, seed, step: 0 })
    }

    pub fn kind(&self) -> &SamplerKind {
        &self.kind
    }

    pub fn policies(&self) -> &PolicyTable {
        &self.policies
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Advances the step counter and applies a due restart.
    pub fn begin_step(&mut self) -> bool {
        self.step += 1;
        self.policies.maybe_restart(self.step)
    }

    /// Draws every aggregation site for `roots` at the current step.
    pub fn build_plan(&self, g: &SparseGraph, roots: &[usize], depth: usize) -> Result<SamplingPlan> {
        build_plan(&self.kind, g, &self.policies, roots, depth, self.seed, self.step)
    }

    /// Updates policies from rewards at the sites that consume `h^(1)`.
    pub fn feedback(&mut self, g: &SparseGraph, plan: &SamplingPlan, trace: &ForwardTrace) -> Result<FeedbackReport> {
        feedback(&self.kind, g, &mut self.policies, plan, trace)
    }
}

/// Layer whose sites receive rewards: the one aggregating `h^(1)`, or the
/// input layer for single-layer models.
pub fn reward_layer(depth: usize) -> usize {
    if depth >= 2 {
        2
    } else {
        1
    }
}

pub fn build_plan(
    kind: &SamplerKind,
    g: &SparseGraph,
    policies: &PolicyTable,
    roots: &[usize],
    depth: usize,
    seed: u64,
    step: u64,
) -> Result<SamplingPlan> {
    SamplingPlan::build(g, roots, depth, |v, layer| {
        let mut rng = stream(seed, Purpose::Sampling, mix(&[step, layer as u64]), v as u64);
        draw_site(kind, g, policies, v, layer, &mut rng)
    })
}

fn draw_site<R: rand::Rng>(
    kind: &SamplerKind,
    g: &SparseGraph,
    policies: &PolicyTable,
    v: usize,
    layer: usize,
    rng: &mut R,
) -> Result<Site> {
    let degree = g.degree(v);
    if degree == 0 {
        return Err(Error::IsolatedNode(v));
    }
    let ids_of = |arms: &[usize]| arms.iter().map(|&a| g.neighbors(v)[a]).collect::<Vec<_>>();
    let site = match kind.algo {
        SamplerAlgo::Uniform => {
            let (arms, p, total) = if degree <= kind.k {
                ((0..degree).collect::<Vec<_>>(), 1.0, degree as f64)
            } else {
                let mut a = index::sample(rng, degree, kind.k).into_vec();
                a.sort_unstable();
                (a, kind.k as f64 / degree as f64, kind.k as f64)
            };
            let n = arms.len();
            Site {
                root: v,
                layer,
                degree,
                ids: ids_of(&arms),
                arms,
                counts: vec![1; n],
                probs: vec![p; n],
                prob_total: total,
                draws: n,
                capped: vec![false; n],
                estimator: kind.estimator,
            }
        }
        _ => {
            let state = policies.view(v, degree)?;
            let out = state.draw(kind.mode(), rng)?;
            let total = match kind.mode() {
                BanditMode::Exp3 => 1.0,
                BanditMode::Exp3M => state.plays() as f64,
            };
            Site {
                root: v,
                layer,
                degree,
                ids: ids_of(&out.sampled),
                probs: out.sampled.iter().map(|&a| out.probabilities[a]).collect(),
                capped: out.sampled.iter().map(|&a| out.capped[a]).collect(),
                arms: out.sampled,
                counts: out.counts,
                prob_total: total,
                draws: out.draws,
                estimator: kind.estimator,
            }
        }
    };
    Ok(site)
}

pub fn feedback(
    kind: &SamplerKind,
    g: &SparseGraph,
    policies: &mut PolicyTable,
    plan: &SamplingPlan,
    trace: &ForwardTrace,
) -> Result<FeedbackReport> {
    let mut report = FeedbackReport::default();
    if kind.algo == SamplerAlgo::Uniform {
        return Ok(report);
    }
    let layer = reward_layer(plan.depth());
    let below = layer - 1;
    for site in plan.sites(layer) {
        let w = g.weights(site.root);
        let mut zs = Vec::with_capacity(site.ids.len());
        for (j, &id) in site.ids.iter().enumerate() {
            let h = trace
                .embedding(below, id)
                .ok_or_else(|| Error::Plan(format!("no layer-{below} embedding for node {id}")))?;
            zs.push(&h * w[site.arms[j]]);
        }
        let rewards: Vec<f64> = match kind.algo {
            SamplerAlgo::BanditSampler => {
                zs.iter().zip(&site.probs).map(|(z, &p)| reward_banditsampler(z.view(), p)).collect::<Result<_>>()?
            }
            _ => {
                let mut mean = Array1::<f64>::zeros(zs[0].len());
                for (z, &c) in zs.iter().zip(&site.counts) {
                    mean.scaled_add(f64::from(c), z);
                }
                mean /= site.draws as f64;
                zs.iter().map(|z| relu_reward(z.view(), mean.view())).collect()
            }
        };
        for z in &zs {
            report.max_z_norm = report.max_z_norm.max(z.dot(z).sqrt());
        }
        let records: Vec<RewardRecord> = site
            .arms
            .iter()
            .zip(&rewards)
            .zip(&site.probs)
            .map(|((&arm, &reward), &prob)| RewardRecord { arm, reward, prob })
            .collect();
        let capped: Vec<usize> = site.arms.iter().zip(&site.capped).filter(|(_, &c)| c).map(|(&a, _)| a).collect();
        let skip_capped = kind.mode() == BanditMode::Exp3M;
        policies
            .row_mut(site.root, site.degree)?
            .apply_rewards(&records, |arm| skip_capped && capped.contains(&arm))?;
        report.rewards.extend(rewards);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{Activation, GcnState, LrSchedule};
    use crate::graph::{LoadOptions, Weighting};
    use ndarray::{array, Array2};

    fn star(k: usize) -> SparseGraph {
        let edges: Vec<_> = (1..=k).map(|i| (0, i)).collect();
        SparseGraph::load_edge_list(&edges, k + 1, Weighting::Uniform, LoadOptions::default()).unwrap()
    }

    #[test]
    fn uniform_saturates_small_degree() {
        let g = star(3);
        let s = Sampler::new(SamplerKind::new(SamplerAlgo::Uniform, 5, 0.0, 0.0, None), 4, 1).unwrap();
        let plan = s.build_plan(&g, &[0], 1).unwrap();
        let site = plan.site(0, 1).unwrap();
        assert_eq!(site.ids, vec![1, 2, 3]);
        assert_eq!(site.probs, vec![1.0; 3]);
    }

    #[test]
    fn thanos_m_symmetric_start() {
        let g = star(5);
        let s = Sampler::new(SamplerKind::new(SamplerAlgo::ThanosM, 2, 0.1, 0.2, None), 6, 3).unwrap();
        let plan = s.build_plan(&g, &[0], 1).unwrap();
        let site = plan.site(0, 1).unwrap();
        assert_eq!(site.ids.len(), 2);
        assert!(site.probs.iter().all(|&p| (p - 0.4).abs() < 1e-15));
        assert_eq!(s.policies().materialized(), 0);
    }

    #[test]
    fn path_frontier_sizes() {
        let edges: Vec<_> = (0..9).map(|i| (i, i + 1)).collect();
        let g = SparseGraph::load_edge_list(&edges, 10, Weighting::SymmetricNorm, LoadOptions::default()).unwrap();
        for algo in [SamplerAlgo::Uniform, SamplerAlgo::Thanos, SamplerAlgo::ThanosM, SamplerAlgo::BanditSampler] {
            let s = Sampler::new(SamplerKind::new(algo, 1, 0.1, 0.2, None), 10, 9).unwrap();
            let plan = s.build_plan(&g, &[5], 2).unwrap();
            assert!(plan.frontier(1).len() <= 1);
            assert!(plan.frontier(0).len() <= 1);
        }
    }

    fn trained_pair(algo: SamplerAlgo, feats: Array2<f64>) -> (Sampler, SamplingPlan, ForwardTrace, SparseGraph) {
        let g = SparseGraph::load_edge_list(&[(0, 1), (0, 2), (0, 3)], 4, Weighting::Uniform, LoadOptions::default())
            .unwrap()
            .attach_features(feats)
            .unwrap();
        let mut s = Sampler::new(SamplerKind::new(algo, 2, 0.5, 0.2, None), 4, 4).unwrap();
        s.begin_step();
        let plan = s.build_plan(&g, &[0], 1).unwrap();
        let state = GcnState::new(vec![Array2::eye(2)], Activation::Relu, LrSchedule::Constant(0.0)).unwrap();
        let trace = state.forward_sampled(&g, &plan).unwrap();
        (s, plan, trace, g)
    }

    #[test]
    fn uniform_feedback_is_noop() {
        let (mut s, plan, trace, g) =
            trained_pair(SamplerAlgo::Uniform, array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let before = s.policies().clone();
        assert!(s.feedback(&g, &plan, &trace).unwrap().rewards.is_empty());
        assert_eq!(s.policies(), &before);
    }

    #[test]
    fn identical_embeddings_keep_relative_weights() {
        let f = array![[0.0, 0.0], [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let (mut s, plan, trace, g) = trained_pair(SamplerAlgo::ThanosM, f);
        let rep = s.feedback(&g, &plan, &trace).unwrap();
        assert!(rep.rewards.iter().all(|&r| (r - 5.0).abs() < 1e-12));
        let w = s.policies().get(0).unwrap().weights().to_vec();
        let site = plan.site(0, 1).unwrap();
        let sampled: Vec<f64> = site.arms.iter().map(|&a| w[a]).collect();
        assert!((sampled[0] - sampled[1]).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_neighbor_gets_zero_reward() {
        let g = SparseGraph::load_edge_list(&[(0, 1), (0, 2), (0, 3)], 4, Weighting::Uniform, LoadOptions::default())
            .unwrap()
            .attach_features(array![[0.0, 0.0], [1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
            .unwrap();
        let plan = SamplingPlan::build(&g, &[0], 1, |v, l| {
            let mut site = Site::full(&g, v, l)?;
            site.arms = vec![0, 1];
            site.ids = vec![1, 2];
            site.counts = vec![1, 1];
            site.draws = 2;
            site.probs = vec![1.0 / 3.0; 2];
            site.prob_total = 1.0;
            site.capped = vec![false; 2];
            site.estimator = EstimatorMode::Biased;
            Ok(site)
        })
        .unwrap();
        let trace = GcnState::new(vec![Array2::eye(2)], Activation::Relu, LrSchedule::Constant(0.0))
            .unwrap()
            .forward_sampled(&g, &plan)
            .unwrap();
        let kind = SamplerKind::new(SamplerAlgo::Thanos, 2, 0.5, 0.2, None);
        let mut policies = PolicyTable::new(4, 2, 0.5, 0.2, None).unwrap();
        let rep = feedback(&kind, &g, &mut policies, &plan, &trace).unwrap();
        assert_eq!(rep.rewards, vec![0.0, 0.0]);
        assert_eq!(policies.get(0).unwrap().weights(), &[1.0; 3]);
    }
}
