//! Bandit-driven neighbor sampling for graph convolutional networks.
//!
//! The crate covers the full pipeline: a CSR graph store, a GCN with manual
//! backpropagation, estimator and reward algebra, Exp3/Exp3.M bandits with
//! dependent rounding and restarts, the neighbor samplers built on them,
//! synthetic regret environments, and the experiment runners.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod gcn;
pub mod graph;
pub mod plan;
pub mod regret;
pub mod reward;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod synth;

pub use bandit::{ArmState, BanditMode, DrawOutcome, PolicyTable, RewardRecord};
pub use error::{Error, Result};
pub use estimator::{NeighborSnapshot, PolicyMass};
pub use gcn::{Activation, AssumptionMonitor, BoundConstants, ForwardTrace, GcnState, LrSchedule, MonitorDelta};
pub use graph::{GraphConstants, LoadOptions, SparseGraph, Weighting};
pub use plan::{EstimatorMode, SamplingPlan, Site};
pub use reward::{RewardConfig, RewardKind};
pub use sampler::{Sampler, SamplerAlgo, SamplerKind};
