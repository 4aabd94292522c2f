//! Flat `[section]` / `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gcn::{Activation, LrSchedule};
use crate::graph::Weighting;
use crate::plan::EstimatorMode;
use crate::regret::{EnvSpec, Noise, RegretPolicy, Tuning};
use crate::sampler::{SamplerAlgo, SamplerKind};
use crate::synth::SbmSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ApproxError,
    NormBias,
    TrainAccuracy,
    RegretScaling,
    BudgetMonitor,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "approx_error" => ExperimentKind::ApproxError,
            "norm_bias" => ExperimentKind::NormBias,
            "train_accuracy" => ExperimentKind::TrainAccuracy,
            "regret_scaling" => ExperimentKind::RegretScaling,
            "budget_monitor" => ExperimentKind::BudgetMonitor,
            _ => return Err(Error::Config(format!("unknown experiment {s:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ApproxError => "approx_error",
            ExperimentKind::NormBias => "norm_bias",
            ExperimentKind::TrainAccuracy => "train_accuracy",
            ExperimentKind::RegretScaling => "regret_scaling",
            ExperimentKind::BudgetMonitor => "budget_monitor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    Files(GraphFiles),
    Synthetic(SbmSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub source: GraphSource,
    pub self_loops: bool,
    pub weighting: Weighting,
    pub corrupt_fraction: f64,
    pub corrupt_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub depth: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub lr: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub trials: usize,
    pub steps: usize,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretConfig {
    pub env: EnvSpec,
    pub arms: usize,
    pub plays: usize,
    pub cap: f64,
    pub noise: Noise,
    pub horizons: Vec<usize>,
    pub policies: Vec<RegretPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub sampler: SamplerKind,
    pub baseline: Option<SamplerKind>,
    pub run: RunConfig,
    pub regret: Option<RegretConfig>,
    resolved: Vec<(String, Vec<(String, String)>)>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "graph",
        &[
            "edges",
            "features",
            "labels",
            "train",
            "val",
            "test",
            "nodes",
            "communities",
            "p_in",
            "p_out",
            "feature_dim",
            "center_scale",
            "feature_noise",
            "self_loops",
            "weighting",
            "corrupt_fraction",
            "corrupt_scale",
            "model",
        ],
    ),
    ("model", &["depth", "hidden", "activation", "lr", "lr_value", "layer"]),
    ("sampler", &["sampler", "k", "eta", "gamma", "delta_t", "estimator"]),
    ("baseline", &["sampler", "k", "eta", "gamma", "delta_t", "estimator"]),
    ("run", &["experiment", "epochs", "batch_size", "seed", "trials", "steps", "probes"]),
    (
        "regret",
        &[
            "env",
            "arms",
            "plays",
            "cap",
            "noise",
            "horizons",
            "policies",
            "c_v_bar",
            "num_changes",
            "gap",
            "budget",
            "eta",
            "gamma",
            "delta_t",
        ],
    ),
];

type Raw = BTreeMap<String, BTreeMap<String, String>>;

fn parse_raw(text: &str) -> Result<Raw> {
    let mut raw: Raw = BTreeMap::new();
    let mut section: Option<String> = None;
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config(format!("line {}: unknown section [{name}]", no + 1)));
            }
            if raw.contains_key(name) {
                return Err(Error::Config(format!("line {}: section [{name}] repeated", no + 1)));
            }
            raw.insert(name.to_string(), BTreeMap::new());
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", no + 1)));
        };
        let Some(sec) = &section else {
            return Err(Error::Config(format!("line {}: key outside any section", no + 1)));
        };
        let key = key.trim();
        let allowed = SECTIONS.iter().find(|(s, _)| s == sec).unwrap().1;
        if !allowed.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key {key:?} in [{sec}]", no + 1)));
        }
        let entries = raw.get_mut(sec).unwrap();
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key {key:?} repeated in [{sec}]", no + 1)));
        }
    }
    Ok(raw)
}

/// Typed reads from one section, remembering resolved values for the manifest.
struct Reader<'a> {
    name: &'static str,
    entries: Option<&'a BTreeMap<String, String>>,
    resolved: Vec<(String, String)>,
}

impl<'a> Reader<'a> {
    fn new(raw: &'a Raw, name: &'static str) -> Self {
        Reader { name, entries: raw.get(name), resolved: Vec::new() }
    }

    fn present(&self) -> bool {
        self.entries.is_some()
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.entries.and_then(|e| e.get(key)).map(String::as_str)
    }

    fn get<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s.parse::<T>().map_err(|e| Error::Config(format!("[{}] {key} = {s:?}: {e}", self.name)))?,
            None => default,
        };
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn get_str(&mut self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or(default).to_string();
        self.resolved.push((key.to_string(), v.clone()));
        v
    }

    fn get_path(&mut self, key: &str, base: &Path) -> Option<PathBuf> {
        let s = self.raw(key)?;
        self.resolved.push((key.to_string(), s.to_string()));
        Some(base.join(s))
    }

    fn finish(self, out: &mut Vec<(String, Vec<(String, String)>)>) {
        if !self.resolved.is_empty() {
            out.push((self.name.to_string(), self.resolved));
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn parse_sampler(r: &mut Reader<'_>) -> Result<SamplerKind> {
    let algo = SamplerAlgo::parse(&r.get_str("sampler", "thanos"))?;
    let k: usize = r.get("k", 2)?;
    let eta: f64 = r.get("eta", 0.1)?;
    let gamma: f64 = r.get("gamma", 0.1)?;
    let delta_t: u64 = r.get("delta_t", 0)?;
    let default_est = match algo.default_estimator() {
        EstimatorMode::Biased => "biased",
        _ => "unbiased",
    };
    let estimator = match r.get_str("estimator", default_est).as_str() {
        "biased" => EstimatorMode::Biased,
        "unbiased" => EstimatorMode::Unbiased,
        other => return Err(Error::Config(format!("[{}] unknown estimator {other:?}", r.name))),
    };
    ensure(k >= 1, || format!("[{}] k must be >= 1", r.name))?;
    if algo != SamplerAlgo::Uniform {
        ensure(eta > 0.0 && eta.is_finite(), || format!("[{}] eta must be > 0", r.name))?;
        ensure(gamma > 0.0 && gamma <= 1.0, || format!("[{}] gamma must be in (0, 1]", r.name))?;
    }
    let kind = SamplerKind::new(algo, k, eta, gamma, (delta_t > 0).then_some(delta_t)).with_estimator(estimator);
    kind.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(kind)
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',').map(|x| x.trim().parse::<T>().map_err(|_| Error::Config(format!("bad {what} entry {x:?}")))).collect()
}

fn parse_policy(s: &str, r: &mut Reader<'_>) -> Result<RegretPolicy> {
    Ok(match s {
        "rexp3_auto" => RegretPolicy::Rexp3Auto(Tuning::Epoch),
        "rexp3_auto_horizon" => RegretPolicy::Rexp3Auto(Tuning::Horizon),
        "exp3m_no_restart" => RegretPolicy::Exp3mNoRestart,
        "uniform_random" => RegretPolicy::UniformRandom,
        "rexp3_manual" => {
            let eta: f64 = r.get("eta", 0.1)?;
            let gamma: f64 = r.get("gamma", 0.1)?;
            let delta_t: u64 = r.get("delta_t", 100)?;
            ensure(delta_t >= 1, || "[regret] delta_t must be >= 1".into())?;
            RegretPolicy::Rexp3Manual { eta, gamma, delta_t }
        }
        other => return Err(Error::Config(format!("unknown regret policy {other:?}"))),
    })
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw = parse_raw(text)?;
        let mut resolved = Vec::new();

        let mut run = Reader::new(&raw, "run");
        let experiment = ExperimentKind::parse(&run.get_str("experiment", "train_accuracy"))?;
        let run_cfg = RunConfig {
            epochs: run.get("epochs", 10)?,
            batch_size: run.get("batch_size", 64)?,
            seed: run.get("seed", 0)?,
            trials: run.get("trials", 1)?,
            steps: run.get("steps", 0)?,
            probes: run.get("probes", 8)?,
        };
        ensure(run_cfg.batch_size >= 1, || "[run] batch_size must be >= 1".into())?;
        ensure(run_cfg.trials >= 1, || "[run] trials must be >= 1".into())?;

        let mut gr = Reader::new(&raw, "graph");
        if let Some(m) = gr.raw("model") {
            return Err(Error::Config(format!("[graph] model = {m:?}: only GCN is supported")));
        }
        let source = match gr.get_path("edges", base) {
            Some(edges) => {
                let mut need = |key: &str| {
                    gr.get_path(key, base).ok_or_else(|| Error::Config(format!("[graph] edges given without {key}")))
                };
                let files = GraphFiles {
                    edges,
                    features: need("features")?,
                    labels: need("labels")?,
                    train: need("train")?,
                    val: need("val")?,
                    test: need("test")?,
                };
                for p in [&files.edges, &files.features, &files.labels, &files.train, &files.val, &files.test] {
                    ensure(p.exists(), || format!("[graph] file {} does not exist", p.display()))?;
                }
                GraphSource::Files(files)
            }
            None => {
                let d = SbmSpec::default();
                let spec = SbmSpec {
                    nodes: gr.get("nodes", d.nodes)?,
                    communities: gr.get("communities", d.communities)?,
                    p_in: gr.get("p_in", d.p_in)?,
                    p_out: gr.get("p_out", d.p_out)?,
                    feature_dim: gr.get("feature_dim", d.feature_dim)?,
                    center_scale: gr.get("center_scale", d.center_scale)?,
                    feature_noise: gr.get("feature_noise", d.feature_noise)?,
                };
                ensure((0.0..=1.0).contains(&spec.p_in) && (0.0..=1.0).contains(&spec.p_out), || {
                    "[graph] edge probabilities must lie in [0, 1]".into()
                })?;
                GraphSource::Synthetic(spec)
            }
        };
        let self_loops: bool = gr.get("self_loops", false)?;
        let weighting = match gr.get_str("weighting", "symmetric").as_str() {
            "symmetric" => Weighting::SymmetricNorm,
            "uniform" => Weighting::Uniform,
            other => return Err(Error::Config(format!("[graph] unknown weighting {other:?}"))),
        };
        let corrupt_fraction: f64 = gr.get("corrupt_fraction", 0.0)?;
        let corrupt_scale: f64 = gr.get("corrupt_scale", 1.0)?;
        ensure((0.0..=1.0).contains(&corrupt_fraction), || "[graph] corrupt_fraction must lie in [0, 1]".into())?;
        ensure(corrupt_scale.is_finite(), || "[graph] corrupt_scale must be finite".into())?;
        let graph = GraphConfig { source, self_loops, weighting, corrupt_fraction, corrupt_scale };

        let mut mr = Reader::new(&raw, "model");
        if let Some(l) = mr.raw("layer") {
            return Err(Error::Config(format!("[model] layer = {l:?}: only GCN layers are supported")));
        }
        let depth: usize = mr.get("depth", 2)?;
        let hidden: usize = mr.get("hidden", 16)?;
        let activation = match mr.get_str("activation", "relu").as_str() {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(Error::Config(format!("[model] unknown activation {other:?}"))),
        };
        let lr_kind = mr.get_str("lr", "constant");
        let lr_value: f64 = mr.get("lr_value", 0.001)?;
        ensure(lr_value >= 0.0 && lr_value.is_finite(), || "[model] lr_value must be >= 0".into())?;
        let lr = match lr_kind.as_str() {
            "constant" => LrSchedule::Constant(lr_value),
            "inverse_t" => LrSchedule::InverseT { base: lr_value },
            other => return Err(Error::Config(format!("[model] unknown lr schedule {other:?}"))),
        };
        ensure(depth >= 1 && hidden >= 1, || "[model] depth and hidden must be >= 1".into())?;
        let model = ModelConfig { depth, hidden, activation, lr };

        let mut sr = Reader::new(&raw, "sampler");
        let sampler = parse_sampler(&mut sr)?;
        let mut br = Reader::new(&raw, "baseline");
        let baseline = if br.present() { Some(parse_sampler(&mut br)?) } else { None };

        let mut rr = Reader::new(&raw, "regret");
        let regret = if rr.present() || experiment == ExperimentKind::RegretScaling {
            let env_name = rr.get_str("env", "log_decay");
            let env = match env_name.as_str() {
                "log_decay" => EnvSpec::LogDecay { c_v_bar: rr.get("c_v_bar", 0.5)? },
                "piecewise" => {
                    EnvSpec::PiecewiseConstant { num_changes: rr.get("num_changes", 2)?, gap: rr.get("gap", 2.0)? }
                }
                "sinusoidal" => EnvSpec::Sinusoidal { budget: rr.get("budget", 1.0)? },
                other => return Err(Error::Config(format!("[regret] unknown env {other:?}"))),
            };
            let arms: usize = rr.get("arms", 10)?;
            let plays: usize = rr.get("plays", 2)?;
            let cap: f64 = rr.get("cap", 1.0)?;
            let half: f64 = rr.get("noise", 0.0)?;
            let horizons = parse_list::<usize>(&rr.get_str("horizons", "1000,3000,10000,30000,100000"), "horizon")?;
            let policy_names = rr.get_str("policies", "rexp3_auto,uniform_random");
            let policies =
                policy_names.split(',').map(|p| parse_policy(p.trim(), &mut rr)).collect::<Result<Vec<_>>>()?;
            ensure(arms >= 2 && plays >= 1 && plays <= arms, || {
                "[regret] need arms >= 2 and 1 <= plays <= arms".into()
            })?;
            ensure(cap > 0.0 && half >= 0.0, || "[regret] cap must be > 0 and noise >= 0".into())?;
            ensure(horizons.iter().all(|&t| t >= arms), || "[regret] every horizon must be >= arms".into())?;
            let noise = if half > 0.0 { Noise::BoundedUniform(half) } else { Noise::None };
            Some(RegretConfig { env, arms, plays, cap, noise, horizons, policies })
        } else {
            None
        };

        for r in [gr, mr, sr, br, run, rr] {
            r.finish(&mut resolved);
        }
        resolved.sort_by_key(|(name, _)| SECTIONS.iter().position(|(s, _)| s == name));
        Ok(ExperimentConfig { experiment, graph, model, sampler, baseline, run: run_cfg, regret, resolved })
    }

    /// Resolved configuration, one `key = value` per line under section headers.
    pub fn manifest_body(&self) -> String {
        let mut out = String::new();
        for (section, entries) in &self.resolved {
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self.set_resolved("run", "seed", seed.to_string());
        self
    }

    /// Overrides the experiment kind, e.g. from a CLI verb.
    pub fn with_experiment(mut self, kind: ExperimentKind) -> Result<Self> {
        if kind == ExperimentKind::RegretScaling && self.regret.is_none() {
            return Err(Error::Config("regret_scaling needs a [regret] section".into()));
        }
        self.experiment = kind;
        self.set_resolved("run", "experiment", kind.name().to_string());
        Ok(self)
    }

    fn set_resolved(&mut self, section: &str, key: &str, value: String) {
        for (name, entries) in &mut self.resolved {
            if name == section {
                for (k, v) in entries.iter_mut() {
                    if k == key {
                        *v = value.clone();
                    }
                }
            }
        }
    }
}
