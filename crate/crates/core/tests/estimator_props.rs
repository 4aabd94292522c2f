mod common;

use bgs::estimator::{
    bias_and_variance_k1, biased_estimate, constant_variance, effective_variance, min_variance, optimal_policy,
};
use bgs::{NeighborSnapshot, PolicyMass};
use common::{rel_err, rng, snapshot_with_arms};
use ndarray::Array2;
use proptest::prelude::*;

fn snapshot_strategy() -> impl Strategy<Value = NeighborSnapshot> {
    (1usize..=6, 1usize..=4).prop_flat_map(|(k, d)| {
        (prop::collection::vec(-5.0f64..5.0, k * d), prop::collection::vec(0.01f64..1.0, k)).prop_map(move |(z, w)| {
            let total: f64 = w.iter().sum();
            let p = w.iter().map(|x| x / total).collect();
            NeighborSnapshot::new(Array2::from_shape_vec((k, d), z).unwrap(), p, PolicyMass::Single).unwrap()
        })
    })
}

/// All `k`-multisets of arms as ordered draws, with their probability under `p`.
fn ordered_draws(p: &[f64], k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|(seq, pr)| {
                (0..p.len()).map(move |i| {
                    let mut s = seq.clone();
                    s.push(i);
                    (s, pr * p[i])
                })
            })
            .collect();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bias_plus_variance_is_mean_squared_error(s in snapshot_strategy()) {
        let (b, v) = bias_and_variance_k1(&s).unwrap();
        let k = s.arm_count() as f64;
        let mu = s.aggregate();
        let mse: f64 = (0..s.arm_count())
            .map(|i| {
                let d = &s.z(i) * k - &mu;
                s.policy()[i] * d.dot(&d)
            })
            .sum();
        prop_assert!(b >= 0.0 && v >= 0.0);
        prop_assert!(rel_err(b + v, mse, 1e-12) < 1e-9);
    }

    #[test]
    fn unbiased_variance_is_effective_minus_constant(s in snapshot_strategy()) {
        let mu = s.aggregate();
        let var: f64 = (0..s.arm_count())
            .map(|i| {
                let p = s.policy()[i];
                let d = &s.z(i) / p - &mu;
                p * d.dot(&d)
            })
            .sum();
        let ve = effective_variance(&s).unwrap();
        prop_assert!(ve >= constant_variance(&s) * (1.0 - 1e-12));
        prop_assert!((var - (ve - constant_variance(&s))).abs() <= 1e-9 * ve.max(1e-12));
    }

    #[test]
    fn optimal_policy_beats_the_drawn_policy(s in snapshot_strategy()) {
        let star = s.with_policy(optimal_policy(&s).unwrap(), PolicyMass::Single).unwrap();
        let v_star = effective_variance(&star).unwrap();
        prop_assert!(v_star <= effective_variance(&s).unwrap() * (1.0 + 1e-12));
        let gap = v_star - constant_variance(&s);
        prop_assert!((gap - min_variance(&s).unwrap()).abs() <= 1e-9 * v_star.max(1e-12));
    }

    #[test]
    fn uniform_policy_has_no_bias(s in snapshot_strategy()) {
        let k = s.arm_count();
        let u = s.with_policy(vec![1.0 / k as f64; k], PolicyMass::Single).unwrap();
        let (b, _) = bias_and_variance_k1(&u).unwrap();
        prop_assert!(b <= 1e-12 * (1.0 + constant_variance(&s)));
    }

    #[test]
    fn constant_variance_is_quadratic(s in snapshot_strategy(), c in -4.0f64..4.0) {
        let scaled = NeighborSnapshot::new(s.embeddings() * c, s.policy().to_vec(), PolicyMass::Single).unwrap();
        prop_assert!(rel_err(constant_variance(&scaled), c * c * constant_variance(&s), 1e-12) < 1e-12);
    }
}

#[test]
fn biased_estimate_under_uniform_draws_is_exact() {
    // k draws with replacement under the uniform policy: E[(K/k) sum z] = mu
    let mut r = rng(7);
    for _ in 0..50 {
        let s = snapshot_with_arms(&mut r, 4, 3);
        let uniform = vec![0.25; 4];
        for k in 1..=3 {
            let mut expect = ndarray::Array1::<f64>::zeros(3);
            for (draw, pr) in ordered_draws(&uniform, k) {
                expect.scaled_add(pr, &biased_estimate(&s, &draw, k).unwrap());
            }
            for (a, b) in expect.iter().zip(s.aggregate().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn biased_estimate_expectation_tracks_policy_mean() {
    // under policy p the expectation is K sum_i p_i z_i, whose gap to mu is the bias term
    let mut r = rng(8);
    for _ in 0..50 {
        let s = snapshot_with_arms(&mut r, 3, 2);
        let mut expect = ndarray::Array1::<f64>::zeros(2);
        for (draw, pr) in ordered_draws(s.policy(), 1) {
            expect.scaled_add(pr, &biased_estimate(&s, &draw, 1).unwrap());
        }
        let gap = &expect - &s.aggregate();
        let (b, _) = bias_and_variance_k1(&s).unwrap();
        assert!(rel_err(gap.dot(&gap), b, 1e-12) < 1e-9);
    }
}
