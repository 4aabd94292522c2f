//! Stochastic-block-model graphs with Gaussian community features.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::graph::{LoadOptions, SparseGraph, Weighting};
use crate::rng::{root_stream, stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmSpec {
    pub nodes: usize,
    pub communities: usize,
    /// Edge probability within a community.
    pub p_in: f64,
    /// Edge probability across communities.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of community centers per coordinate.
    pub center_scale: f64,
    /// Standard deviation of node features around their center.
    pub feature_noise: f64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            nodes: 2000,
            communities: 4,
            p_in: 0.01,
            p_out: 0.001,
            feature_dim: 16,
            center_scale: 1.0,
            feature_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl LabeledGraph {
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn build(&self, weighting: Weighting, opts: LoadOptions) -> Result<SparseGraph> {
        SparseGraph::load_edge_list(&self.edges, self.node_count(), weighting, opts)?
            .attach_features(self.features.clone())
    }
}

/// Node `i` belongs to community `i % communities`. Nodes left without an
/// edge are linked to a random member of their own community.
pub fn generate_sbm(spec: &SbmSpec, seed: u64) -> Result<LabeledGraph> {
    let SbmSpec { nodes, communities, p_in, p_out, feature_dim, center_scale, feature_noise } = *spec;
    if communities == 0 || nodes < 2 * communities {
        return Err(invalid!("need at least two nodes per community"));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(invalid!("edge probabilities must lie in [0, 1]"));
    }
    if feature_dim == 0 || !(center_scale >= 0.0) || !(feature_noise >= 0.0) {
        return Err(invalid!("bad feature settings"));
    }
    let labels: Vec<usize> = (0..nodes).map(|i| i % communities).collect();
    let mut rng = root_stream(seed, Purpose::Graph);
    let mut edges = Vec::new();
    let mut degree = vec![0usize; nodes];
    for u in 0..nodes {
        for v in u + 1..nodes {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
                degree[u] += 1;
                degree[v] += 1;
            }
        }
    }
    for u in 0..nodes {
        if degree[u] == 0 {
            let mut v = u;
            while v == u {
                v = labels[u] + communities * rng.random_range(0..nodes.div_ceil(communities));
                if v >= nodes {
                    v = u;
                }
            }
            edges.push((u.min(v), u.max(v)));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    let centers_dist = Normal::new(0.0, center_scale).map_err(|e| invalid!("{e}"))?;
    let noise_dist = Normal::new(0.0, feature_noise).map_err(|e| invalid!("{e}"))?;
    let mut frng = stream(seed, Purpose::Graph, 1, 0);
    let centers = Array2::from_shape_simple_fn((communities, feature_dim), || centers_dist.sample(&mut frng));
    let features =
        Array2::from_shape_fn((nodes, feature_dim), |(i, j)| centers[[labels[i], j]] + noise_dist.sample(&mut frng));
    let split = random_split(nodes, seed);
    Ok(LabeledGraph { edges, features, labels, classes: communities, split })
}

/// 60/20/20 split of `0..nodes`.
pub fn random_split(nodes: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..nodes).collect();
    order.shuffle(&mut root_stream(seed, Purpose::Split));
    let n_train = nodes * 3 / 5;
    let n_val = nodes / 5;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Split { train, val, test }
}
