#![allow(dead_code)]

use std::path::PathBuf;

use bgs::experiment::ExperimentConfig;
use bgs::{LoadOptions, NeighborSnapshot, PolicyMass, SparseGraph, Weighting};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shipped experiment configs live at the workspace root.
pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_file(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * (2.0 * r.random::<f64>() - 1.0))
}

/// Strictly positive single-play policy.
pub fn random_policy(r: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + r.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_snapshot(r: &mut impl Rng, max_arms: usize, max_dim: usize) -> NeighborSnapshot {
    let k = r.random_range(1..=max_arms);
    let d = r.random_range(1..=max_dim);
    snapshot_with_arms(r, k, d)
}

pub fn snapshot_with_arms(r: &mut impl Rng, k: usize, d: usize) -> NeighborSnapshot {
    let z = random_matrix(r, k, d, 3.0);
    let p = random_policy(r, k);
    NeighborSnapshot::new(z, p, PolicyMass::Single).unwrap()
}

/// Connected random graph: a spanning path plus random chords.
pub fn random_graph(r: &mut impl Rng, nodes: usize, extra: usize, feature_dim: usize, self_loops: bool) -> SparseGraph {
    let mut edges: Vec<(usize, usize)> = (1..nodes).map(|v| (v - 1, v)).collect();
    for _ in 0..extra {
        let a = r.random_range(0..nodes);
        let b = r.random_range(0..nodes);
        if a != b {
            edges.push((a, b));
        }
    }
    let feats = random_matrix(r, nodes, feature_dim, 1.0);
    SparseGraph::load_edge_list(&edges, nodes, Weighting::SymmetricNorm, LoadOptions { self_loops })
        .unwrap()
        .attach_features(feats)
        .unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
