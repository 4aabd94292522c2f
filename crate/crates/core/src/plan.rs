//! Per-step computation graphs: which neighbors feed each aggregation.
//!
//! A plan for depth `L` holds frontiers `V_L` (the batch roots) down to `V_0`
//! and, for each layer `l` in `1..=L`, one [`Site`] per node of `V_l`
//! listing the neighbors whose `h^(l-1)` rows are aggregated into `h^(l)`.

use crate::error::{invalid, Error, Result};
use crate::graph::SparseGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// Full-neighborhood sum; coefficients are the edge weights.
    Exact,
    /// `(K/k) sum_{i in S} a_vi h_i`, draws counted with multiplicity.
    Biased,
    /// `(1/k) sum_{i in S} a_vi h_i / q_i` with `q_i` the per-draw probability.
    Unbiased,
}

/// One aggregation site: root `v` at layer `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub root: usize,
    pub layer: usize,
    pub degree: usize,
    /// Positions within the root's adjacency row, ascending and distinct.
    pub arms: Vec<usize>,
    /// Neighbor ids matching `arms`.
    pub ids: Vec<usize>,
    /// Times each arm was drawn (1 for without-replacement schemes).
    pub counts: Vec<u32>,
    /// Probability of each arm at draw time.
    pub probs: Vec<f64>,
    /// Mass of the full policy: 1 for Exp3-style, `k` for inclusion policies.
    pub prob_total: f64,
    /// Number of draws `k`, counted with multiplicity.
    pub draws: usize,
    /// Arms held at probability 1 by weight capping.
    pub capped: Vec<bool>,
    pub estimator: EstimatorMode,
}

impl Site {
    /// Site covering every neighbor with exact weights.
    pub fn full(g: &SparseGraph, root: usize, layer: usize) -> Result<Site> {
        let degree = g.degree(root);
        if degree == 0 {
            return Err(Error::IsolatedNode(root));
        }
        Ok(Site {
            root,
            layer,
            degree,
            arms: (0..degree).collect(),
            ids: g.neighbors(root).to_vec(),
            counts: vec![1; degree],
            probs: vec![1.0; degree],
            prob_total: degree as f64,
            draws: degree,
            capped: vec![false; degree],
            estimator: EstimatorMode::Exact,
        })
    }

    /// Aggregation coefficients `(neighbor id, c_i)` with `mu_hat = sum c_i h_i`.
    pub fn coefficients(&self, g: &SparseGraph) -> Result<Vec<(usize, f64)>> {
        if self.ids.is_empty() || self.draws == 0 {
            return Err(Error::Plan(format!("empty sample at node {} layer {}", self.root, self.layer)));
        }
        let w = g.weights(self.root);
        let mut out = Vec::with_capacity(self.ids.len());
        for (j, &pos) in self.arms.iter().enumerate() {
            let a = *w.get(pos).ok_or_else(|| Error::Plan(format!("arm {pos} outside row of {}", self.root)))?;
            let c = f64::from(self.counts[j]);
            let coef = match self.estimator {
                EstimatorMode::Exact => a,
                EstimatorMode::Biased => a * c * self.degree as f64 / self.draws as f64,
                EstimatorMode::Unbiased => {
                    let p = self.probs[j];
                    if !(p > 0.0) {
                        return Err(Error::Plan(format!(
                            "zero probability for sampled neighbor {} of {}",
                            self.ids[j], self.root
                        )));
                    }
                    a * c * self.prob_total / (self.draws as f64 * p)
                }
            };
            out.push((self.ids[j], coef));
        }
        Ok(out)
    }

    fn validate(&self, g: &SparseGraph) -> Result<()> {
        let n = self.ids.len();
        if self.arms.len() != n || self.counts.len() != n || self.probs.len() != n || self.capped.len() != n {
            return Err(Error::Plan(format!("ragged site at node {}", self.root)));
        }
        if n == 0 {
            return Err(Error::Plan(format!("empty sample at node {} layer {}", self.root, self.layer)));
        }
        let row = g.neighbors(self.root);
        if self.degree != row.len() {
            return Err(Error::Plan(format!("degree mismatch at node {}", self.root)));
        }
        for (j, &pos) in self.arms.iter().enumerate() {
            if row.get(pos) != Some(&self.ids[j]) {
                return Err(Error::Plan(format!("{} is not neighbor {pos} of {}", self.ids[j], self.root)));
            }
            if j > 0 && self.arms[j - 1] >= pos {
                return Err(Error::Plan(format!("arms of node {} not strictly ascending", self.root)));
            }
        }
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        if total as usize != self.draws && self.estimator != EstimatorMode::Exact {
            return Err(Error::Plan(format!(
                "draw counts at node {} sum to {total}, expected {}",
                self.root, self.draws
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    /// `frontiers[l]` lists `V_l`, ascending except `V_L` which keeps batch order.
    frontiers: Vec<Vec<usize>>,
    /// `sites[l - 1][j]` aggregates into row `j` of `frontiers[l]`.
    sites: Vec<Vec<Site>>,
}

impl SamplingPlan {
    /// Deduplicates roots, keeping first occurrences.
    pub fn dedup_roots(roots: &[usize]) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        roots.iter().copied().filter(|r| seen.insert(*r)).collect()
    }

    /// Builds a plan top-down with `site_for(root, layer)` choosing each sample.
    pub fn build<F>(g: &SparseGraph, roots: &[usize], depth: usize, mut site_for: F) -> Result<SamplingPlan>
    where
        F: FnMut(usize, usize) -> Result<Site>,
    {
        if depth == 0 {
            return Err(invalid!("depth must be >= 1"));
        }
        let top = Self::dedup_roots(roots);
        if top.is_empty() {
            return Err(invalid!("no roots"));
        }
        let mut frontiers = vec![Vec::new(); depth + 1];
        let mut sites = vec![Vec::new(); depth];
        frontiers[depth] = top;
        for l in (1..=depth).rev() {
            let mut layer_sites = Vec::with_capacity(frontiers[l].len());
            let mut below = Vec::new();
            for &v in &frontiers[l] {
                if v >= g.node_count() {
                    return Err(Error::UnknownNode(v));
                }
                if g.degree(v) == 0 {
                    return Err(Error::IsolatedNode(v));
                }
                let site = site_for(v, l)?;
                if site.root != v || site.layer != l {
                    return Err(Error::Internal(format!("site for ({v},{l}) labelled ({},{})", site.root, site.layer)));
                }
                site.validate(g)?;
                below.extend_from_slice(&site.ids);
                layer_sites.push(site);
            }
            below.sort_unstable();
            below.dedup();
            frontiers[l - 1] = below;
            sites[l - 1] = layer_sites;
        }
        Ok(SamplingPlan { frontiers, sites })
    }

    /// Plan using every neighbor with exact edge weights.
    pub fn full(g: &SparseGraph, roots: &[usize], depth: usize) -> Result<SamplingPlan> {
        Self::build(g, roots, depth, |v, l| Site::full(g, v, l))
    }

    pub fn depth(&self) -> usize {
        self.sites.len()
    }

    pub fn roots(&self) -> &[usize] {
        &self.frontiers[self.depth()]
    }

    pub fn frontier(&self, layer: usize) -> &[usize] {
        &self.frontiers[layer]
    }

    pub fn frontiers(&self) -> &[Vec<usize>] {
        &self.frontiers
    }

    /// Sites producing `h^(layer)`, aligned with `frontier(layer)`.
    pub fn sites(&self, layer: usize) -> &[Site] {
        &self.sites[layer - 1]
    }

    pub fn sites_mut(&mut self, layer: usize) -> &mut [Site] {
        &mut self.sites[layer - 1]
    }

    pub fn site(&self, root: usize, layer: usize) -> Option<&Site> {
        let row = self.row_of(layer, root)?;
        self.sites[layer - 1].get(row)
    }

    /// Row of `node` in `frontier(layer)`.
    pub fn row_of(&self, layer: usize, node: usize) -> Option<usize> {
        let f = self.frontiers.get(layer)?;
        if layer == self.depth() {
            f.iter().position(|&x| x == node)
        } else {
            f.binary_search(&node).ok()
        }
    }

    pub fn all_sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.iter().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LoadOptions, Weighting};

    fn path(n: usize) -> SparseGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        SparseGraph::load_edge_list(&edges, n, Weighting::SymmetricNorm, LoadOptions::default()).unwrap()
    }

    #[test]
    fn full_plan_frontiers() {
        let g = path(5);
        let plan = SamplingPlan::full(&g, &[2, 2], 2).unwrap();
        assert_eq!(plan.roots(), &[2]);
        assert_eq!(plan.frontier(1), &[1, 3]);
        assert_eq!(plan.frontier(0), &[0, 2, 4]);
        assert_eq!(plan.site(3, 1).unwrap().ids, vec![2, 4]);
        assert!(plan.site(2, 1).is_none());
    }

    #[test]
    fn coefficient_modes() {
        let g = SparseGraph::load_edge_list(&[(0, 1), (0, 2)], 3, Weighting::Uniform, LoadOptions::default()).unwrap();
        let mut s = Site::full(&g, 0, 1).unwrap();
        assert_eq!(s.coefficients(&g).unwrap(), vec![(1, 1.0), (2, 1.0)]);
        s.arms = vec![0];
        s.ids = vec![1];
        s.counts = vec![1];
        s.probs = vec![0.5];
        s.capped = vec![false];
        s.prob_total = 1.0;
        s.draws = 1;
        s.estimator = EstimatorMode::Biased;
        assert_eq!(s.coefficients(&g).unwrap(), vec![(1, 2.0)]);
        s.estimator = EstimatorMode::Unbiased;
        assert_eq!(s.coefficients(&g).unwrap(), vec![(1, 2.0)]);
        s.probs = vec![0.0];
        assert!(s.coefficients(&g).is_err());
    }

    #[test]
    fn rejects_isolated_and_foreign_ids() {
        let g = path(3);
        let bad = SamplingPlan::build(&g, &[0], 1, |v, l| {
            let mut s = Site::full(&g, v, l)?;
            s.ids = vec![2];
            Ok(s)
        });
        assert!(bad.is_err());
        assert!(SamplingPlan::full(&g, &[7], 1).is_err());
        assert!(SamplingPlan::full(&g, &[], 1).is_err());
    }
}
