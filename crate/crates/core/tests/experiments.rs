mod common;

use std::path::Path;

use bgs::experiment::{probe_rewards, run, write_results, ExperimentConfig, ResultRecord, MANIFEST_FILE, RESULTS_FILE};
use bgs::{Activation, Error, GcnState, LrSchedule, Sampler, SamplerAlgo, SamplerKind, SparseGraph};
use common::{random_graph, rng};

const SMALL_GRAPH: &str =
    "[graph]\nnodes = 60\ncommunities = 2\np_in = 0.3\np_out = 0.05\nfeature_dim = 4\nself_loops = true\n";

fn parse(text: &str) -> bgs::Result<ExperimentConfig> {
    ExperimentConfig::parse(text, Path::new("."))
}

fn config(body: &str) -> ExperimentConfig {
    parse(&format!("{SMALL_GRAPH}{body}")).unwrap()
}

fn values<'a>(records: &'a [ResultRecord], metric: &'a str) -> impl Iterator<Item = f64> + 'a {
    records.iter().filter(move |r| r.metric == metric).map(|r| r.value)
}

#[test]
fn malformed_configs_are_config_errors() {
    for text in [
        "[nonsense]\n",
        "[graph]\nnodes = 10\nnodes = 11\n",
        "[graph]\ncolour = red\n",
        "nodes = 10\n",
        "[graph]\nnodes = ten\n",
        "[graph]\np_in = 1.5\n",
        "[graph]\nmodel = gat\n",
        "[model]\nactivation = swish\n",
        "[sampler]\nsampler = magic\n",
        "[sampler]\nsampler = thanos\neta = 0\n",
        "[sampler]\nsampler = thanos\ngamma = 1.5\n",
        "[run]\nexperiment = everything\n",
        "[run]\nbatch_size = 0\n",
        "[graph]\nedges = missing.tsv\n",
        "[graph]\nedges = missing.tsv\nfeatures = f\nlabels = l\ntrain = t\nval = v\ntest = s\n",
        "[regret]\nhorizons = 5,10\narms = 10\n",
    ] {
        assert!(matches!(parse(text), Err(Error::Config(_))), "accepted {text:?}");
    }
}

#[test]
fn approx_error_requires_a_baseline() {
    let cfg = config("[run]\nexperiment = approx_error\nepochs = 1\n");
    assert!(run(&cfg).is_err());
}

#[test]
fn budget_monitor_rejects_constant_rate() {
    let cfg = config("[model]\nlr = constant\nlr_value = 0.1\n[run]\nexperiment = budget_monitor\nsteps = 5\n");
    assert!(matches!(run(&cfg), Err(Error::Config(_))));
}

#[test]
fn zero_rate_budget_monitor_sees_no_variation() {
    let cfg = config(
        "[model]\nlr = inverse_t\nlr_value = 0\n[sampler]\nsampler = thanos\nk = 2\n[run]\nexperiment = budget_monitor\nsteps = 20\nbatch_size = 8\n",
    );
    let recs = run(&cfg).unwrap();
    assert_eq!(values(&recs, "variation_sum").count(), 20);
    assert!(values(&recs, "variation_sum").all(|v| v == 0.0));
    assert!(values(&recs, "budget_ok").all(|v| v == 1.0));
    assert!(values(&recs, "embedding_step_violations").all(|v| v == 0.0));
}

#[test]
fn doubling_features_doubles_cx_and_quadruples_probe_rewards() {
    let mut r = rng(41);
    let g = random_graph(&mut r, 30, 40, 5, true);
    let doubled = SparseGraph::load_edge_list(
        &(0..30).flat_map(|v| g.neighbors(v).iter().filter(move |&&u| u > v).map(move |&u| (v, u))).collect::<Vec<_>>(),
        30,
        bgs::Weighting::SymmetricNorm,
        bgs::LoadOptions { self_loops: true },
    )
    .unwrap()
    .attach_features(g.features().to_owned() * 2.0)
    .unwrap();
    assert_eq!(doubled.weights(7), g.weights(7));
    let cx = g.constants().feature_aggregate_norm;
    assert!((doubled.constants().feature_aggregate_norm - 2.0 * cx).abs() < 1e-12 * cx);

    let state = GcnState::glorot(&[5, 8, 3], Activation::Relu, LrSchedule::InverseT { base: 1.0 }, 7).unwrap();
    let roots = [2, 9, 17, 25];
    let mut s = Sampler::new(SamplerKind::new(SamplerAlgo::Thanos, 3, 0.1, 0.2, None), 30, 3).unwrap();
    s.begin_step();
    let probes = s.build_plan(&g, &roots, 2).unwrap().sites(2).to_vec();
    let base = probe_rewards(&g, &probes, &state.forward_full(&g, &roots).unwrap()).unwrap();
    let twice = probe_rewards(&doubled, &probes, &state.forward_full(&doubled, &roots).unwrap()).unwrap();
    assert!(base.iter().any(|&x| x > 0.0));
    for (a, b) in base.iter().zip(&twice) {
        assert!((b - 4.0 * a).abs() <= 1e-10 * a.max(1.0));
    }
}

#[test]
fn manifest_lists_header_then_sections_in_order() {
    let cfg = config("[run]\nexperiment = train_accuracy\nepochs = 1\nseed = 5\n[sampler]\nsampler = uniform\nk = 3\n");
    let recs = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &cfg, &recs).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "experiment = train_accuracy");
    assert!(lines[1].starts_with("version = "));
    assert_eq!(lines[2], "seed = 5");
    let headers: Vec<&str> = lines.iter().copied().filter(|l| l.starts_with('[')).collect();
    assert_eq!(headers, ["[graph]", "[model]", "[sampler]", "[run]"]);
    assert!(manifest.contains("nodes = 60\n"));
    assert!(manifest.contains("lr_value = 0.001\n"));
    let csv = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some("experiment,seed,step,metric,value"));
    assert_eq!(csv.lines().count(), recs.len() + 1);
}

#[test]
fn saturated_samplers_have_zero_aggregation_error() {
    let cfg = config(
        "[sampler]\nsampler = uniform\nk = 1000\n[baseline]\nsampler = uniform\nk = 1000\nestimator = biased\n[run]\nexperiment = approx_error\nepochs = 2\nbatch_size = 16\ntrials = 2\n",
    );
    let recs = run(&cfg).unwrap();
    assert!(values(&recs, "dist_our").count() > 0);
    for m in ["dist_our", "dist_bs", "final_delta_dist", "mean_delta_dist"] {
        assert!(values(&recs, m).all(|v| v.abs() < 1e-9), "{m}");
    }
}

#[test]
fn unit_scale_corruption_changes_nothing() {
    let text = SMALL_GRAPH.to_string()
        + "corrupt_fraction = 0.2\ncorrupt_scale = 1\n[sampler]\nsampler = thanos\nk = 2\n[run]\nexperiment = norm_bias\nepochs = 2\nbatch_size = 16\ntrials = 2\n";
    let cfg = parse(&text).unwrap();
    let recs = run(&cfg).unwrap();
    let u: Vec<f64> = values(&recs, "thanos.unscaled.count").collect();
    let s: Vec<f64> = values(&recs, "thanos.scaled.count").collect();
    assert_eq!(u.len(), 4);
    assert_eq!(u, s);
}

#[test]
fn saturated_estimators_train_identically() {
    let body = |est: &str| {
        format!("[sampler]\nsampler = uniform\nk = 1000\nestimator = {est}\n[model]\nlr_value = 0.05\n[run]\nexperiment = train_accuracy\nepochs = 3\nbatch_size = 16\n")
    };
    let a = run(&config(&body("unbiased"))).unwrap();
    let b = run(&config(&body("biased"))).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.metric, y.metric);
        assert!((x.value - y.value).abs() < 1e-9, "{}: {} vs {}", x.metric, x.value, y.value);
    }
}

#[test]
fn zero_epochs_report_initial_state_only() {
    let cfg = config("[sampler]\nsampler = thanos\n[run]\nexperiment = train_accuracy\nepochs = 0\n");
    let recs = run(&cfg).unwrap();
    assert!(recs.iter().all(|r| r.step == 0));
    assert_eq!(values(&recs, "thanos.reward_count").collect::<Vec<_>>(), vec![0.0]);
    let cfg = config(
        "[sampler]\nsampler = thanos\n[baseline]\nsampler = uniform\n[run]\nexperiment = approx_error\nepochs = 0\n",
    );
    let recs = run(&cfg).unwrap();
    assert_eq!(values(&recs, "final_delta_dist").collect::<Vec<_>>(), vec![0.0]);
}

#[test]
fn self_comparison_is_centered_at_zero() {
    let cfg = config(
        "[sampler]\nsampler = thanos\nk = 2\n[baseline]\nsampler = thanos\nk = 2\n[run]\nexperiment = approx_error\nepochs = 2\nbatch_size = 16\ntrials = 12\n",
    );
    let recs = run(&cfg).unwrap();
    let finals: Vec<f64> = values(&recs, "final_delta_dist").collect();
    assert_eq!(finals.len(), 12);
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let sd = (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(sd > 0.0);
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");
}
