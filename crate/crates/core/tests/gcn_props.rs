mod common;

use bgs::{Activation, GcnState, LrSchedule, Sampler, SamplerAlgo, SamplerKind, SamplingPlan};
use common::{random_graph, rel_err, rng};
use proptest::prelude::*;
use rand::Rng;

fn activation(tanh: bool) -> Activation {
    if tanh {
        Activation::Tanh
    } else {
        Activation::Relu
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn full_plan_forward_matches_exact_forward(seed in any::<u64>(), depth in 1usize..4, tanh in any::<bool>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 20, 25, 4, seed % 2 == 1);
        let mut dims = vec![4];
        dims.extend(std::iter::repeat_n(5, depth - 1));
        dims.push(3);
        let state = GcnState::glorot(&dims, activation(tanh), LrSchedule::Constant(0.1), seed).unwrap();
        let roots = [3, 0, 7, 3];
        let full = state.forward_full(&g, &roots).unwrap();
        let plan = SamplingPlan::full(&g, &roots, depth).unwrap();
        let sampled = state.forward_sampled(&g, &plan).unwrap();
        prop_assert_eq!(full.logits().dim(), (3, 3));
        for (a, b) in full.logits().iter().zip(sampled.logits().iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>(), depth in 1usize..4, sampled in any::<bool>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 14, 12, 3, true);
        let mut dims = vec![3];
        dims.extend(std::iter::repeat_n(4, depth - 1));
        dims.push(3);
        let state = GcnState::glorot(&dims, Activation::Tanh, LrSchedule::Constant(0.1), seed).unwrap();
        let roots = [1, 6, 11];
        let plan = if sampled {
            let mut s = Sampler::new(SamplerKind::new(SamplerAlgo::ThanosM, 2, 0.1, 0.2, None), 14, seed).unwrap();
            s.begin_step();
            s.build_plan(&g, &roots, depth).unwrap()
        } else {
            SamplingPlan::full(&g, &roots, depth).unwrap()
        };
        let labels: Vec<usize> = roots.iter().map(|_| r.random_range(0..3)).collect();
        let (_, grads, _) = state.loss_and_gradients(&g, &plan, &labels).unwrap();
        let eps = 1e-5;
        for (l, gw) in grads.iter().enumerate() {
            for idx in [(0, 0), (gw.nrows() - 1, gw.ncols() - 1), (gw.nrows() / 2, gw.ncols() / 2)] {
                let mut w = state.weights().to_vec();
                w[l][idx] += eps;
                let mut up = state.clone();
                up.set_weights(w.clone()).unwrap();
                w[l][idx] -= 2.0 * eps;
                let mut down = state.clone();
                down.set_weights(w).unwrap();
                let fd = (up.loss(&g, &plan, &labels).unwrap() - down.loss(&g, &plan, &labels).unwrap()) / (2.0 * eps);
                prop_assert!(rel_err(fd, gw[idx], 1e-6) < 1e-4, "layer {l} {idx:?}: {fd} vs {}", gw[idx]);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), depth in 1usize..4) {
        let mut dims = vec![6];
        dims.extend(std::iter::repeat_n(3, depth - 1));
        dims.push(2);
        let state = GcnState::glorot(&dims, Activation::Relu, LrSchedule::InverseT { base: 1.0 }, seed).unwrap();
        let mut buf = Vec::new();
        state.write_checkpoint(&mut buf).unwrap();
        let back = GcnState::read_checkpoint(buf.as_slice(), Activation::Relu, LrSchedule::InverseT { base: 1.0 }).unwrap();
        prop_assert_eq!(back.weights(), state.weights());
        prop_assert!(GcnState::read_checkpoint(&buf[..buf.len() - 1], Activation::Relu, LrSchedule::Constant(0.1)).is_err());
    }
}

#[test]
fn zero_learning_rate_leaves_weights_alone() {
    let mut r = rng(31);
    let g = random_graph(&mut r, 10, 10, 3, true);
    let mut state = GcnState::glorot(&[3, 4, 2], Activation::Relu, LrSchedule::Constant(0.0), 3).unwrap();
    let before = state.weights().to_vec();
    let plan = SamplingPlan::full(&g, &[0, 1, 2], 2).unwrap();
    let report = state.sgd_step(&g, &plan, &[0, 1, 0]).unwrap();
    assert_eq!(report.learning_rate, 0.0);
    assert_eq!(state.weights(), before.as_slice());
}

#[test]
fn sgd_lowers_the_full_batch_loss() {
    let mut r = rng(32);
    let g = random_graph(&mut r, 30, 40, 4, true);
    let roots: Vec<usize> = (0..30).collect();
    let labels: Vec<usize> = roots.iter().map(|&v| usize::from(g.feature(v)[0] > 0.0)).collect();
    let plan = SamplingPlan::full(&g, &roots, 2).unwrap();
    let mut state = GcnState::glorot(&[4, 8, 2], Activation::Relu, LrSchedule::Constant(0.2), 4).unwrap();
    let start = state.loss(&g, &plan, &labels).unwrap();
    for _ in 0..50 {
        state.sgd_step(&g, &plan, &labels).unwrap();
    }
    assert!(state.loss(&g, &plan, &labels).unwrap() < start);
}
