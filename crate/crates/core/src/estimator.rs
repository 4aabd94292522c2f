//! Closed-form bias, variance and optimal-policy quantities for one
//! aggregation site.
//!
//! A [`NeighborSnapshot`] freezes the weighted embeddings `z_i = a_vi h_i` of a
//! root's `K` neighbors together with a sampling policy over them. Every
//! function here is pure; they serve as diagnostics and as oracles for the
//! samplers.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{invalid, Error, Result};

const MASS_TOL: f64 = 1e-9;

/// Total probability mass carried by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyMass {
    /// One draw; entries sum to 1.
    Single,
    /// `k` plays; entries are inclusion probabilities summing to `k`.
    Multiple(usize),
}

impl PolicyMass {
    fn total(self) -> f64 {
        match self {
            PolicyMass::Single => 1.0,
            PolicyMass::Multiple(k) => k as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSnapshot {
    z: Array2<f64>,
    policy: Vec<f64>,
    mass: PolicyMass,
}

impl NeighborSnapshot {
    pub fn new(z: Array2<f64>, policy: Vec<f64>, mass: PolicyMass) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(invalid!("snapshot needs at least one neighbor"));
        }
        if z.nrows() != policy.len() {
            return Err(Error::Shape(format!("{} embeddings but {} policy entries", z.nrows(), policy.len())));
        }
        if policy.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid!("policy entries must be finite and >= 0"));
        }
        let total: f64 = policy.iter().sum();
        if (total - mass.total()).abs() > MASS_TOL {
            return Err(invalid!("policy sums to {total}, expected {}", mass.total()));
        }
        Ok(NeighborSnapshot { z, policy, mass })
    }

    /// Single-play snapshot under the uniform policy.
    pub fn uniform(z: Array2<f64>) -> Result<Self> {
        let k = z.nrows().max(1);
        Self::new(z, vec![1.0 / k as f64; k], PolicyMass::Single)
    }

    pub fn with_policy(&self, policy: Vec<f64>, mass: PolicyMass) -> Result<Self> {
        Self::new(self.z.clone(), policy, mass)
    }

    pub fn arm_count(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn z(&self, i: usize) -> ArrayView1<'_, f64> {
        self.z.row(i)
    }

    pub fn policy(&self) -> &[f64] {
        &self.policy
    }

    pub fn mass(&self) -> PolicyMass {
        self.mass
    }

    /// `mu = sum_i z_i`.
    pub fn aggregate(&self) -> Array1<f64> {
        self.z.sum_axis(ndarray::Axis(0))
    }

    /// `z_bar = mu / K`.
    pub fn mean_embedding(&self) -> Array1<f64> {
        self.aggregate() / self.arm_count() as f64
    }

    fn norms(&self) -> Vec<f64> {
        self.z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
    }
}

/// Variance-minimizing single-play policy `p*_i = ||z_i|| / sum_j ||z_j||`.
pub fn optimal_policy(snap: &NeighborSnapshot) -> Result<Vec<f64>> {
    let norms = snap.norms();
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all neighbor embeddings are zero".into()));
    }
    Ok(norms.iter().map(|n| n / total).collect())
}

/// Policy-dependent variance `V_e = sum_i ||z_i||^2 / p_i`. Zero embeddings
/// contribute nothing whatever their probability.
pub fn effective_variance(snap: &NeighborSnapshot) -> Result<f64> {
    let mut v = 0.0;
    for (i, &p) in snap.policy.iter().enumerate() {
        let z = snap.z(i);
        let sq = z.dot(&z);
        if sq == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Err(Error::Degenerate(format!("neighbor {i} has nonzero embedding but p = 0")));
        }
        v += sq / p;
    }
    Ok(v)
}

/// Policy-independent variance `V_c = ||sum_j z_j||^2`.
pub fn constant_variance(snap: &NeighborSnapshot) -> f64 {
    let mu = snap.aggregate();
    mu.dot(&mu)
}

/// Minimum single-play variance over all policies:
/// `sum_i sum_j ||z_i|| ||z_j|| (1 - cos(z_i, z_j))`.
pub fn min_variance(snap: &NeighborSnapshot) -> Result<f64> {
    let norms = snap.norms();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("neighbor {i} has a zero embedding; cosine undefined")));
    }
    let k = snap.arm_count();
    let units: Vec<Array1<f64>> = (0..k).map(|i| &snap.z(i) / norms[i]).collect();
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            // 1 - cos = ||u_i - u_j||^2 / 2, counted for (i, j) and (j, i)
            let d = &units[i] - &units[j];
            total += norms[i] * norms[j] * d.dot(&d);
        }
    }
    Ok(total)
}

/// Biased estimate `(K / k) sum_{i in sampled} z_i`.
pub fn biased_estimate(snap: &NeighborSnapshot, sampled: &[usize], k: usize) -> Result<Array1<f64>> {
    if sampled.is_empty() || k == 0 {
        return Err(Error::Degenerate("empty sample".into()));
    }
    if sampled.len() != k {
        return Err(invalid!("{} sampled ids for k = {k}", sampled.len()));
    }
    let mut acc = Array1::zeros(snap.dim());
    for &i in sampled {
        if i >= snap.arm_count() {
            return Err(Error::UnknownNode(i));
        }
        acc += &snap.z(i);
    }
    Ok(acc * (snap.arm_count() as f64 / k as f64))
}

/// Closed-form bias and variance of the biased estimator for a single draw:
/// `Bias = K^2 ||sum_i p_i z_i - z_bar||^2` and
/// `Var = K^2 E_p ||z_i - sum_j p_j z_j||^2`.
pub fn bias_and_variance_k1(snap: &NeighborSnapshot) -> Result<(f64, f64)> {
    if snap.mass != PolicyMass::Single {
        return Err(invalid!("bias/variance closed form needs a single-play policy"));
    }
    let k = snap.arm_count() as f64;
    let mut weighted = Array1::<f64>::zeros(snap.dim());
    for (i, &p) in snap.policy.iter().enumerate() {
        weighted.scaled_add(p, &snap.z(i));
    }
    let gap = &weighted - &snap.mean_embedding();
    let bias = k * k * gap.dot(&gap);
    let mut var = 0.0;
    for (i, &p) in snap.policy.iter().enumerate() {
        let d = &snap.z(i) - &weighted;
        var += p * d.dot(&d);
    }
    Ok((bias, k * k * var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn optimal_policy_ratios() {
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(optimal_policy(&s).unwrap(), vec![0.5, 0.5]);
        let s = NeighborSnapshot::uniform(array![[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(optimal_policy(&s).unwrap(), vec![0.75, 0.25]);
        let s = NeighborSnapshot::uniform(array![[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(optimal_policy(&s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn effective_variance_cases() {
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(close(effective_variance(&s).unwrap(), 4.0));
        let one = NeighborSnapshot::new(array![[2.0, 0.0]], vec![1.0], PolicyMass::Single).unwrap();
        assert!(close(effective_variance(&one).unwrap(), 4.0));
        let zero_p = NeighborSnapshot::new(array![[0.0, 0.0], [1.0, 0.0]], vec![0.0, 1.0], PolicyMass::Single).unwrap();
        assert!(close(effective_variance(&zero_p).unwrap(), 1.0));
        let bad = NeighborSnapshot::new(array![[1.0, 0.0], [1.0, 0.0]], vec![0.0, 1.0], PolicyMass::Single).unwrap();
        assert!(effective_variance(&bad).is_err());
    }

    #[test]
    fn optimal_policy_beats_one_dimensional_grid() {
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let best = effective_variance(&s).unwrap();
        for step in 1..100 {
            let p = step as f64 / 100.0;
            let other = s.with_policy(vec![p, 1.0 - p], PolicyMass::Single).unwrap();
            assert!(effective_variance(&other).unwrap() >= best - 1e-12);
        }
    }

    #[test]
    fn constant_variance_cases() {
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(constant_variance(&s), 0.0);
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(constant_variance(&s), 2.0);
        let scaled = NeighborSnapshot::uniform(array![[3.0, 0.0], [0.0, 3.0]]).unwrap();
        assert!(close(constant_variance(&scaled), 9.0 * 2.0));
    }

    #[test]
    fn min_variance_cases() {
        let same = NeighborSnapshot::uniform(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(min_variance(&same).unwrap().abs() < 1e-12);
        let ortho = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(close(min_variance(&ortho).unwrap(), 2.0));
        let parallel = NeighborSnapshot::uniform(array![[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]]).unwrap();
        assert!(min_variance(&parallel).unwrap().abs() < 1e-12);
        let zero = NeighborSnapshot::uniform(array![[0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(min_variance(&zero).is_err());
    }

    #[test]
    fn biased_estimate_cases() {
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(biased_estimate(&s, &[0, 1, 2], 3).unwrap(), s.aggregate());
        assert_eq!(biased_estimate(&s, &[0, 2], 2).unwrap(), array![3.0, 1.5]);
        assert!(biased_estimate(&s, &[], 0).is_err());
        let twin = NeighborSnapshot::uniform(array![[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(biased_estimate(&twin, &[1], 1).unwrap(), twin.aggregate());
    }

    #[test]
    fn bias_variance_cases() {
        let s = NeighborSnapshot::uniform(array![[1.0, 0.0], [0.0, 3.0], [2.0, 1.0]]).unwrap();
        assert!(bias_and_variance_k1(&s).unwrap().0.abs() < 1e-12);
        let same = NeighborSnapshot::new(array![[1.0, 1.0], [1.0, 1.0]], vec![0.9, 0.1], PolicyMass::Single).unwrap();
        assert!(bias_and_variance_k1(&same).unwrap().1.abs() < 1e-12);
        let pure = NeighborSnapshot::new(array![[1.0, 0.0], [0.0, 1.0]], vec![1.0, 0.0], PolicyMass::Single).unwrap();
        let (b, v) = bias_and_variance_k1(&pure).unwrap();
        assert!(close(b, 2.0));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn snapshot_validation() {
        assert!(NeighborSnapshot::new(array![[1.0]], vec![0.5], PolicyMass::Single).is_err());
        assert!(NeighborSnapshot::new(array![[1.0], [1.0]], vec![1.0], PolicyMass::Single).is_err());
        assert!(NeighborSnapshot::new(array![[1.0], [1.0]], vec![1.0, 1.0], PolicyMass::Multiple(2)).is_ok());
    }
}
