//! Per-arm rewards for the neighbor-sampling bandits.
//!
//! * [`reward_banditsampler`]: `||z_i|| / p_i^2`, the negative gradient of the
//!   effective variance. Unbounded as `p_i -> 0`; never clipped.
//! * [`reward_thanos_exact`]: `2 z_i . z_bar - ||z_i||^2`, the negative
//!   gradient of bias plus variance of the biased estimator.
//! * [`reward_thanos_practical`]: the same with `z_bar` replaced by the mean of
//!   the sampled embeddings, passed through a ReLU.

use ndarray::ArrayView1;

use crate::error::{invalid, Error, Result};
use crate::gcn::BoundConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    BanditSampler,
    ThanosExact,
    ThanosPractical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Optional ceiling used only by monitors; rewards themselves are not clipped.
    pub reward_clip: Option<f64>,
    /// Relative weights of the bias and variance gradients. Only `1:1` gives
    /// the published reward; other ratios are exposed for exploration.
    pub bias_weight: f64,
    pub variance_weight: f64,
}

impl RewardConfig {
    pub fn new(kind: RewardKind) -> Self {
        RewardConfig { kind, reward_clip: None, bias_weight: 1.0, variance_weight: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.reward_clip {
            if !(c > 0.0) {
                return Err(invalid!("reward_clip must be > 0, got {c}"));
            }
        }
        if !(self.bias_weight >= 0.0) || !(self.variance_weight >= 0.0) {
            return Err(invalid!("gradient weights must be >= 0"));
        }
        Ok(())
    }

    /// Whether `value` exceeds the configured monitor ceiling.
    pub fn exceeds_clip(&self, value: f64) -> bool {
        self.reward_clip.is_some_and(|c| value.abs() > c)
    }
}

pub fn reward_banditsampler(z_i: ArrayView1<'_, f64>, p_i: f64) -> Result<f64> {
    if !(p_i > 0.0) {
        return Err(invalid!("sampling probability must be > 0, got {p_i}"));
    }
    Ok(z_i.dot(&z_i).sqrt() / (p_i * p_i))
}

pub fn reward_thanos_exact(z_i: ArrayView1<'_, f64>, z_bar: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(z_i, z_bar)?;
    Ok(2.0 * z_i.dot(&z_bar) - z_i.dot(&z_i))
}

/// Bias/variance reward with separate weights on the two gradients.
///
/// `policy_mean` is `sum_j p_j z_j`. With both weights equal to 1 the
/// policy terms cancel and this equals [`reward_thanos_exact`].
pub fn reward_thanos_weighted(
    z_i: ArrayView1<'_, f64>,
    z_bar: ArrayView1<'_, f64>,
    policy_mean: ArrayView1<'_, f64>,
    cfg: &RewardConfig,
) -> Result<f64> {
    check_dims(z_i, z_bar)?;
    check_dims(z_i, policy_mean)?;
    let bias_grad = 2.0 * (z_i.dot(&policy_mean) - z_i.dot(&z_bar));
    let var_grad = z_i.dot(&z_i) - 2.0 * z_i.dot(&policy_mean);
    Ok(-cfg.bias_weight * bias_grad - cfg.variance_weight * var_grad)
}

/// `ReLU(2 z_i . m - ||z_i||^2)` with `m` the mean of the sampled embeddings.
pub fn reward_thanos_practical<'a, I>(z_i: ArrayView1<'_, f64>, sampled: I) -> Result<f64>
where
    I: IntoIterator<Item = ArrayView1<'a, f64>>,
{
    let mut mean = ndarray::Array1::<f64>::zeros(z_i.len());
    let mut k = 0usize;
    for z in sampled {
        check_dims(z_i, z)?;
        mean += &z;
        k += 1;
    }
    if k == 0 {
        return Err(Error::Degenerate("practical reward needs a nonempty sample".into()));
    }
    mean /= k as f64;
    Ok(relu_reward(z_i, mean.view()))
}

/// `ReLU(2 z_i . m - ||z_i||^2)` for a precomputed sample mean `m`.
pub fn relu_reward(z_i: ArrayView1<'_, f64>, sample_mean: ArrayView1<'_, f64>) -> f64 {
    (2.0 * z_i.dot(&sample_mean) - z_i.dot(&z_i)).max(0.0)
}

/// `C_r = 3 C_z^2` for embedding layer `layer >= 1`.
pub fn reward_bound(constants: &BoundConstants, layer: usize) -> Result<f64> {
    if layer < 1 {
        return Err(invalid!("reward bound is defined for layers >= 1"));
    }
    let cz = constants.c_z(layer);
    Ok(3.0 * cz * cz)
}

fn check_dims(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn banditsampler_cases() {
        let z = array![1.0, 0.0];
        assert_eq!(reward_banditsampler(z.view(), 1.0).unwrap(), 1.0);
        assert!((reward_banditsampler(z.view(), 0.1).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(reward_banditsampler(array![0.0, 0.0].view(), 0.3).unwrap(), 0.0);
        assert!(reward_banditsampler(z.view(), 0.0).is_err());
    }

    #[test]
    fn exact_reward_cases() {
        let zb = array![1.0, 2.0];
        assert_eq!(reward_thanos_exact(zb.view(), zb.view()).unwrap(), zb.dot(&zb));
        assert_eq!(reward_thanos_exact(array![0.0, 0.0].view(), zb.view()).unwrap(), 0.0);
        assert_eq!(reward_thanos_exact((&zb * 2.0).view(), zb.view()).unwrap(), 0.0);
        let perp = array![2.0, -1.0];
        assert_eq!(reward_thanos_exact(perp.view(), zb.view()).unwrap(), -5.0);
        assert!(reward_thanos_exact(array![1.0].view(), zb.view()).is_err());
    }

    #[test]
    fn weighted_reward_reduces_to_exact() {
        let z = array![0.3, -1.2];
        let zb = array![1.0, 0.5];
        let pm = array![-0.7, 2.0];
        let cfg = RewardConfig::new(RewardKind::ThanosExact);
        let w = reward_thanos_weighted(z.view(), zb.view(), pm.view(), &cfg).unwrap();
        let e = reward_thanos_exact(z.view(), zb.view()).unwrap();
        assert!((w - e).abs() < 1e-12);
    }

    #[test]
    fn practical_reward_cases() {
        let m = array![1.0, 1.0];
        let r = reward_thanos_practical(m.view(), [m.view()]).unwrap();
        assert_eq!(r, 2.0);
        let perp = array![1.0, -1.0];
        assert_eq!(reward_thanos_practical(perp.view(), [m.view()]).unwrap(), 0.0);
        let z = array![1.0, 0.0];
        let a = array![2.0, 1.0];
        let b = array![0.0, 1.0];
        assert_eq!(reward_thanos_practical(z.view(), [a.view(), b.view()]).unwrap(), 1.0);
        assert!(reward_thanos_practical(z.view(), std::iter::empty()).is_err());
    }

    #[test]
    fn bound_examples() {
        let unit =
            BoundConstants { c_sigma: 1.0, c_theta: 1.0, c_x: 1.0, max_edge_weight: 1.0, max_degree: 1, c_g: 1.0 };
        assert_eq!(reward_bound(&unit, 1).unwrap(), 3.0);
        let c = BoundConstants { c_theta: 2.0, max_degree: 3, ..unit };
        assert_eq!(c.g(), 6.0);
        assert_eq!(c.c_z(2), 12.0);
        assert_eq!(reward_bound(&c, 2).unwrap(), 432.0);
        assert!(reward_bound(&c, 0).is_err());
    }

    #[test]
    fn clip_validation() {
        let mut cfg = RewardConfig::new(RewardKind::ThanosPractical);
        assert!(cfg.validate().is_ok());
        cfg.reward_clip = Some(0.0);
        assert!(cfg.validate().is_err());
        cfg.reward_clip = Some(2.0);
        assert!(cfg.exceeds_clip(-3.0));
        assert!(!cfg.exceeds_clip(1.5));
    }
}
