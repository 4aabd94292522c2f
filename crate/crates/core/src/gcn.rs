//! Graph convolutional network with manual backpropagation.
//!
//! Hidden layers compute `h^(l) = sigma(mu^(l) W^(l-1))` where `mu^(l)` is the
//! (possibly estimated) neighbor aggregate of `h^(l-1)`. The last layer emits
//! linear logits that feed a softmax cross-entropy loss.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{read_f64, read_u64, SparseGraph};
use crate::plan::{EstimatorMode, SamplingPlan};
use crate::rng::{root_stream, Purpose};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCW1";
const POWER_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at pre-activation `x`; relu uses 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Lipschitz constant.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// `base / t`.
    InverseT {
        base: f64,
    },
    Constant(f64),
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::InverseT { base } => base / step as f64,
            LrSchedule::Constant(v) => v,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            LrSchedule::InverseT { base } => base,
            LrSchedule::Constant(v) => v,
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid!("learning rate must be finite and >= 0, got {v}"));
        }
        Ok(())
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    nodes: Vec<Vec<usize>>,
    layer_embeddings: Vec<Array2<f64>>,
    aggregates: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    links: Vec<Vec<Vec<(usize, f64)>>>,
    estimators: Vec<Vec<EstimatorMode>>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.aggregates.len()
    }

    /// Nodes whose `h^(layer)` rows are stored, in row order.
    pub fn nodes(&self, layer: usize) -> &[usize] {
        &self.nodes[layer]
    }

    pub fn row_of(&self, layer: usize, node: usize) -> Option<usize> {
        let f = self.nodes.get(layer)?;
        if layer == self.depth() {
            f.iter().position(|&x| x == node)
        } else {
            f.binary_search(&node).ok()
        }
    }

    /// `h^(layer)` for every stored node; layer 0 is the input features.
    pub fn embeddings(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.layer_embeddings[layer].view()
    }

    pub fn embedding(&self, layer: usize, node: usize) -> Option<ArrayView1<'_, f64>> {
        let r = self.row_of(layer, node)?;
        Some(self.layer_embeddings[layer].row(r))
    }

    /// Aggregates that fed `h^(layer)`, aligned with `nodes(layer)`.
    pub fn aggregates(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.aggregates[layer - 1].view()
    }

    pub fn aggregate(&self, layer: usize, node: usize) -> Option<ArrayView1<'_, f64>> {
        let r = self.row_of(layer, node)?;
        Some(self.aggregates[layer - 1].row(r))
    }

    pub fn pre_activations(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.pre_activations[layer - 1].view()
    }

    /// Estimator that produced each aggregate at `layer`.
    pub fn estimators(&self, layer: usize) -> &[EstimatorMode] {
        &self.estimators[layer - 1]
    }

    /// Output logits, one row per root.
    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.layer_embeddings[self.depth()].view()
    }
}

/// What one SGD step observed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MonitorDelta {
    /// Largest spectral norm over layers, before or after the update.
    pub param_norm: f64,
    /// `sum_l ||grad W^(l)||_F`.
    pub grad_norm_sum: f64,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: f64,
    pub learning_rate: f64,
    pub delta: MonitorDelta,
    /// Forward pass the gradient was taken on.
    pub trace: ForwardTrace,
}

/// Running maxima of the empirical constants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssumptionMonitor {
    pub max_param_norm_seen: f64,
    pub max_grad_norm_sum_seen: f64,
    /// Per embedding layer `l >= 1`, index `l - 1`: `max a_vi ||h^(l)_i||`.
    pub max_weighted_embedding_norm_seen: Vec<f64>,
    /// Per embedding layer `l >= 1`, index `l - 1`.
    pub max_embedding_step_seen: Vec<f64>,
}

impl AssumptionMonitor {
    /// Starts with the norms of the initial weights.
    pub fn new(state: &GcnState) -> Self {
        let depth = state.depth();
        AssumptionMonitor {
            max_param_norm_seen: state.max_spectral_norm(),
            max_grad_norm_sum_seen: 0.0,
            max_weighted_embedding_norm_seen: vec![0.0; depth],
            max_embedding_step_seen: vec![0.0; depth],
        }
    }

    pub fn absorb(&mut self, delta: &MonitorDelta) {
        self.max_param_norm_seen = self.max_param_norm_seen.max(delta.param_norm);
        self.max_grad_norm_sum_seen = self.max_grad_norm_sum_seen.max(delta.grad_norm_sum);
    }

    /// Folds `max_i (max_v a_vi) ||h^(l)_i||` of a trace into the maxima.
    pub fn observe_trace(&mut self, g: &SparseGraph, trace: &ForwardTrace) {
        for l in 1..=trace.depth() {
            let m = weighted_norm_max(g, trace, l);
            let slot = &mut self.max_weighted_embedding_norm_seen[l - 1];
            *slot = slot.max(m);
        }
    }

    pub fn record_embedding_step(&mut self, layer: usize, value: f64) {
        let slot = &mut self.max_embedding_step_seen[layer - 1];
        *slot = slot.max(value);
    }

    pub fn bound_constants(&self, g: &SparseGraph, activation: Activation) -> BoundConstants {
        let c = g.constants();
        BoundConstants {
            c_sigma: activation.lipschitz(),
            c_theta: self.max_param_norm_seen,
            c_x: c.feature_aggregate_norm,
            max_edge_weight: c.max_edge_weight,
            max_degree: c.max_degree,
            c_g: self.max_grad_norm_sum_seen,
        }
    }
}

/// Constants of the reward and variation bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_sigma: f64,
    pub c_theta: f64,
    pub c_x: f64,
    pub max_edge_weight: f64,
    pub max_degree: usize,
    pub c_g: f64,
}

impl BoundConstants {
    /// `G = C_sigma C_theta D_max A_max`.
    pub fn g(&self) -> f64 {
        self.c_sigma * self.c_theta * self.max_degree as f64 * self.max_edge_weight
    }

    /// `C_z = G^(l-1) A_max C_sigma C_theta C_x`.
    pub fn c_z(&self, layer: usize) -> f64 {
        self.g().powi(layer as i32 - 1) * self.max_edge_weight * self.c_sigma * self.c_theta * self.c_x
    }

    /// `C_r = 3 C_z^2`.
    pub fn c_r(&self, layer: usize) -> f64 {
        3.0 * self.c_z(layer).powi(2)
    }

    /// `alpha G^(l-1) A_max C_sigma C_x C_g`.
    pub fn embedding_step_bound(&self, layer: usize, alpha: f64) -> f64 {
        alpha * self.g().powi(layer as i32 - 1) * self.max_edge_weight * self.c_sigma * self.c_x * self.c_g
    }

    /// `12 G^(2(l-1)) C_sigma^2 C_x^2 A_max^2 C_theta C_g`, the per-`1/t` reward drift.
    pub fn variation_constant(&self, layer: usize) -> f64 {
        12.0 * self.g().powi(2 * (layer as i32 - 1))
            * self.c_sigma.powi(2)
            * self.c_x.powi(2)
            * self.max_edge_weight.powi(2)
            * self.c_theta
            * self.c_g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnState {
    layer_weights: Vec<Array2<f64>>,
    step: u64,
    lr_schedule: LrSchedule,
    activation: Activation,
}

impl GcnState {
    pub fn new(layer_weights: Vec<Array2<f64>>, activation: Activation, lr_schedule: LrSchedule) -> Result<Self> {
        if layer_weights.is_empty() {
            return Err(invalid!("depth must be >= 1"));
        }
        for (l, pair) in layer_weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Shape(format!(
                    "layer {l} emits {} columns but layer {} takes {} rows",
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows()
                )));
            }
        }
        lr_schedule.validate()?;
        Ok(GcnState { layer_weights, step: 1, lr_schedule, activation })
    }

    /// Glorot-uniform weights for layer widths `dims[0] -> dims[1] -> ...`.
    pub fn glorot(dims: &[usize], activation: Activation, lr_schedule: LrSchedule, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid!("need at least two positive layer widths, got {dims:?}"));
        }
        let mut rng = root_stream(seed, Purpose::Init);
        let weights = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..=limit))
            })
            .collect();
        Self::new(weights, activation, lr_schedule)
    }

    pub fn depth(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.layer_weights
    }

    pub fn set_weights(&mut self, weights: Vec<Array2<f64>>) -> Result<()> {
        let fresh = Self::new(weights, self.activation, self.lr_schedule)?;
        self.layer_weights = fresh.layer_weights;
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.lr_schedule
    }

    /// Rate the next SGD step will use.
    pub fn learning_rate(&self) -> f64 {
        self.lr_schedule.rate(self.step)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layer_weights[self.depth() - 1].ncols()
    }

    pub fn max_spectral_norm(&self) -> f64 {
        self.layer_weights.iter().map(|w| spectral_norm(w.view())).fold(0.0, f64::max)
    }

    /// Exact forward pass over full neighborhoods of `roots`.
    pub fn forward_full(&self, g: &SparseGraph, roots: &[usize]) -> Result<ForwardTrace> {
        let plan = SamplingPlan::full(g, roots, self.depth())?;
        self.forward_sampled(g, &plan)
    }

    /// Forward pass along a plan; each site uses its own estimator.
    pub fn forward_sampled(&self, g: &SparseGraph, plan: &SamplingPlan) -> Result<ForwardTrace> {
        let depth = self.depth();
        if plan.depth() != depth {
            return Err(invalid!("plan depth {} but model depth {depth}", plan.depth()));
        }
        if g.feature_dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns but the first layer takes {}",
                g.feature_dim(),
                self.input_dim()
            )));
        }
        let nodes = plan.frontiers().to_vec();
        let mut h0 = Array2::zeros((nodes[0].len(), g.feature_dim()));
        for (r, &v) in nodes[0].iter().enumerate() {
            h0.row_mut(r).assign(&g.feature(v));
        }
        let mut layer_embeddings = vec![h0];
        let mut aggregates = Vec::with_capacity(depth);
        let mut pre_activations = Vec::with_capacity(depth);
        let mut links = Vec::with_capacity(depth);
        let mut estimators = Vec::with_capacity(depth);
        for l in 1..=depth {
            let below = &nodes[l - 1];
            let prev = &layer_embeddings[l - 1];
            let sites = plan.sites(l);
            let mut rows = Vec::with_capacity(sites.len());
            let mut agg = Array2::zeros((sites.len(), prev.ncols()));
            for (r, site) in sites.iter().enumerate() {
                let coefs = site.coefficients(g)?;
                let mut row = Vec::with_capacity(coefs.len());
                for (id, c) in coefs {
                    let col = below
                        .binary_search(&id)
                        .map_err(|_| Error::Internal(format!("node {id} missing from frontier {}", l - 1)))?;
                    agg.row_mut(r).scaled_add(c, &prev.row(col));
                    row.push((col, c));
                }
                rows.push(row);
            }
            let z = agg.dot(&self.layer_weights[l - 1]);
            let h = if l < depth { z.mapv(|x| self.activation.apply(x)) } else { z.clone() };
            estimators.push(sites.iter().map(|s| s.estimator).collect());
            links.push(rows);
            aggregates.push(agg);
            pre_activations.push(z);
            layer_embeddings.push(h);
        }
        Ok(ForwardTrace { nodes, layer_embeddings, aggregates, pre_activations, links, estimators })
    }

    /// Mean softmax cross-entropy over the plan's roots and its weight gradients.
    ///
    /// `labels[j]` is the class of `plan.roots()[j]`.
    pub fn loss_and_gradients(
        &self,
        g: &SparseGraph,
        plan: &SamplingPlan,
        labels: &[usize],
    ) -> Result<(f64, Vec<Array2<f64>>, ForwardTrace)> {
        let trace = self.forward_sampled(g, plan)?;
        let roots = plan.roots();
        if labels.len() != roots.len() {
            return Err(invalid!("{} labels for {} roots", labels.len(), roots.len()));
        }
        let classes = self.output_dim();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid!("label {bad} outside {classes} classes"));
        }
        let (loss, mut dz) = softmax_cross_entropy(trace.logits(), labels);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss} at step {}", self.step)));
        }
        let depth = self.depth();
        let mut grads = vec![Array2::zeros((0, 0)); depth];
        for l in (1..=depth).rev() {
            grads[l - 1] = trace.aggregates[l - 1].t().dot(&dz);
            if l == 1 {
                break;
            }
            let da = dz.dot(&self.layer_weights[l - 1].t());
            let mut dh = Array2::<f64>::zeros(trace.layer_embeddings[l - 1].raw_dim());
            for (r, row) in trace.links[l - 1].iter().enumerate() {
                for &(col, c) in row {
                    dh.row_mut(col).scaled_add(c, &da.row(r));
                }
            }
            let act = self.activation;
            dh.zip_mut_with(&trace.pre_activations[l - 2], |d, &z| *d *= act.derivative(z));
            dz = dh;
        }
        for (l, gw) in grads.iter().enumerate() {
            if gw.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {l} at step {}", self.step)));
            }
        }
        Ok((loss, grads, trace))
    }

    /// Loss only, used by gradient checks.
    pub fn loss(&self, g: &SparseGraph, plan: &SamplingPlan, labels: &[usize]) -> Result<f64> {
        let trace = self.forward_sampled(g, plan)?;
        if labels.len() != plan.roots().len() {
            return Err(invalid!("{} labels for {} roots", labels.len(), plan.roots().len()));
        }
        Ok(softmax_cross_entropy(trace.logits(), labels).0)
    }

    /// One SGD step `W <- W - alpha_t grad` on the sampled computation graph.
    pub fn sgd_step(&mut self, g: &SparseGraph, plan: &SamplingPlan, labels: &[usize]) -> Result<StepReport> {
        let before = self.max_spectral_norm();
        let (loss, grads, trace) = self.loss_and_gradients(g, plan, labels)?;
        let alpha = self.learning_rate();
        let grad_norm_sum = grads.iter().map(|gw| gw.iter().map(|x| x * x).sum::<f64>().sqrt()).sum();
        if alpha != 0.0 {
            for (w, gw) in self.layer_weights.iter_mut().zip(&grads) {
                w.scaled_add(-alpha, gw);
            }
        }
        self.step += 1;
        let after = self.max_spectral_norm();
        Ok(StepReport {
            loss,
            learning_rate: alpha,
            delta: MonitorDelta { param_norm: before.max(after), grad_norm_sum },
            trace,
        })
    }

    /// Predicted class per root of a full forward pass.
    pub fn predict(&self, g: &SparseGraph, roots: &[usize]) -> Result<Vec<usize>> {
        let trace = self.forward_full(g, roots)?;
        Ok(trace.logits().outer_iter().map(|row| argmax(row)).collect())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.depth() as u64).to_le_bytes())?;
        for m in &self.layer_weights {
            w.write_all(&(m.nrows() as u64).to_le_bytes())?;
            w.write_all(&(m.ncols() as u64).to_le_bytes())?;
            for x in m.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads weights; the step counter restarts at 1.
    pub fn read_checkpoint<R: Read>(mut r: R, activation: Activation, lr_schedule: LrSchedule) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let depth = read_u64(&mut r)?;
        if depth == 0 || depth > 1024 {
            return Err(Error::Format(format!("implausible depth {depth}")));
        }
        let mut weights = Vec::with_capacity(depth as usize);
        for _ in 0..depth {
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            if rows.checked_mul(cols).is_none_or(|n| n > 1 << 32) {
                return Err(Error::Format(format!("implausible layer shape {rows}x{cols}")));
            }
            let data = (0..rows * cols).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            weights.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?);
        }
        Self::new(weights, activation, lr_schedule)
    }
}

/// Checks `max_i ||z^(l)_{i,t+1} - z^(l)_{i,t}|| <= alpha G^(l-1) A C_sigma C_x C_g`.
///
/// `z_i = a_vi h_i` is taken at the largest weight on node `i`'s row.
pub fn embedding_step_bound_check(
    g: &SparseGraph,
    trace_t: &ForwardTrace,
    trace_t1: &ForwardTrace,
    constants: &BoundConstants,
    layer: usize,
    alpha: f64,
) -> Result<bool> {
    let step = embedding_step(g, trace_t, trace_t1, layer)?;
    Ok(step <= constants.embedding_step_bound(layer, alpha) * (1.0 + 1e-12) + 1e-15)
}

/// `max_i (max_v a_vi) ||h^(l)_{i,t+1} - h^(l)_{i,t}||` over the shared node set.
pub fn embedding_step(g: &SparseGraph, trace_t: &ForwardTrace, trace_t1: &ForwardTrace, layer: usize) -> Result<f64> {
    if layer == 0 || layer > trace_t.depth() || layer > trace_t1.depth() {
        return Err(invalid!("layer {layer} outside both traces"));
    }
    if trace_t.nodes(layer) != trace_t1.nodes(layer) {
        return Err(invalid!("traces cover different nodes at layer {layer}"));
    }
    let a = trace_t.embeddings(layer);
    let b = trace_t1.embeddings(layer);
    let mut worst = 0.0f64;
    for (r, &i) in trace_t.nodes(layer).iter().enumerate() {
        let diff = &b.row(r) - &a.row(r);
        worst = worst.max(max_weight_at(g, i) * diff.dot(&diff).sqrt());
    }
    Ok(worst)
}

fn max_weight_at(g: &SparseGraph, i: usize) -> f64 {
    g.weights(i).iter().copied().fold(0.0, f64::max)
}

fn weighted_norm_max(g: &SparseGraph, trace: &ForwardTrace, layer: usize) -> f64 {
    let h = trace.embeddings(layer);
    trace
        .nodes(layer)
        .iter()
        .enumerate()
        .map(|(r, &i)| max_weight_at(g, i) * h.row(r).dot(&h.row(r)).sqrt())
        .fold(0.0, f64::max)
}

/// Largest singular value by power iteration on `W^T W`.
pub fn spectral_norm(w: ArrayView2<'_, f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let mut v: Array1<f64> = (0..w.ncols()).map(|j| 1.0 + (j as f64 * 0.618_033_988_75).fract()).collect();
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let n = v.dot(&v).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        v /= n;
        let wv = w.dot(&v);
        sigma = wv.dot(&wv).sqrt();
        v = w.t().dot(&wv);
    }
    sigma
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn softmax_cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (r, (row, &y)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let exps = row.mapv(|x| (x - m).exp());
        let s = exps.sum();
        loss += s.ln() + m - row[y];
        let mut gr = grad.row_mut(r);
        gr.assign(&(exps / s));
        gr[y] -= 1.0;
    }
    grad /= b;
    (loss / b, grad)
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}
