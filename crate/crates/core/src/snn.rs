//! Feed-forward spiking network of leaky integrate-and-fire layers trained
//! by backpropagation through time with a fast-sigmoid surrogate gradient,
//! and its ReLU twin with the same layer shapes.
//!
//! Per step and layer: `I = W x + b`, `v_pre = beta v + I`,
//! `s = H(v_pre - theta)`, `v = v_pre - s theta`. The output layer's
//! `v_pre` enters the loss; its spikes decide the prediction.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::InputSequence;
use crate::error::{invalid, Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub beta: f64,
    pub theta: f64,
    pub v_reset: f64,
    /// Surrogate slope `k`.
    pub slope: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            beta: 0.95,
            theta: 1.0,
            v_reset: 0.0,
            slope: 25.0,
        }
    }
}

/// One soft-reset LIF update: returns the spike and the next potential.
pub fn lif_step(v: f64, i: f64, p: &LifParams) -> (f64, f64) {
    let v_pre = p.beta * v + i;
    let s = if v_pre >= p.theta { 1.0 } else { 0.0 };
    (s, v_pre - s * p.theta)
}

/// Fast-sigmoid surrogate `1 / (1 + k |v_pre - theta|)^2`.
pub fn surrogate_grad(v_pre: f64, p: &LifParams) -> f64 {
    fast_sigmoid_grad(v_pre - p.theta, p.slope)
}

#[inline]
fn fast_sigmoid_grad(u: f64, k: f64) -> f64 {
    let d = 1.0 + k * u.abs();
    1.0 / (d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Lif,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Subtract the threshold after a spike.
    Soft,
    /// Set the potential to `v_reset = 0` after a spike.
    Hard,
}

/// Spike nonlinearity in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFn {
    Heaviside,
    /// `0.5 + u / (1 + k |u|)`, whose exact derivative is the surrogate.
    /// Used to check the backward pass against finite differences.
    Smooth,
}

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
    beta: usize,
    theta: usize,
}

/// Layered weights with one learnable decay and threshold per LIF layer.
///
/// All parameters live in one flat vector; per layer the layout is
/// `W (out x in, row-major) | b | beta_raw | theta_raw`, with
/// `beta = sigmoid(beta_raw)` and `theta = softplus(theta_raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub sizes: Vec<usize>,
    pub unit: UnitKind,
    pub params: Vec<f64>,
    pub slope: f64,
    pub reset: ResetMode,
    pub spike_fn: SpikeFn,
    /// When false, decay and threshold stay at their initial values.
    pub learn_lif: bool,
    pub seed: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl NetworkModel {
    /// Uniform `+-1/sqrt(fan_in)` weights and biases, `beta = 0.95`, `theta = 1`.
    pub fn new(sizes: &[usize], unit: UnitKind, seed: u64) -> Result<Self> {
        Self::with_lif(sizes, unit, LifParams::default(), seed)
    }

    pub fn with_lif(sizes: &[usize], unit: UnitKind, lif: LifParams, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("layer sizes {sizes:?} need >= 2 non-zero entries")));
        }
        if !(lif.beta > 0.0 && lif.beta < 1.0) || !(lif.theta > 0.0) {
            return Err(invalid(format!("LIF parameters out of range: {lif:?}")));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1] + 2).sum();
        let mut model = NetworkModel {
            sizes: sizes.to_vec(),
            unit,
            params: vec![0.0; n],
            slope: lif.slope,
            reset: ResetMode::Soft,
            spike_fn: SpikeFn::Heaviside,
            learn_lif: true,
            seed,
        };
        let mut rng = Stream::new(seed);
        for l in model.layouts() {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            for p in &mut model.params[l.w..l.beta] {
                *p = rng.uniform_range(-bound, bound);
            }
            model.params[l.beta] = logit(lif.beta);
            model.params[l.theta] = softplus_inv(lif.theta);
        }
        Ok(model)
    }

    fn layouts(&self) -> Vec<LayerLayout> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    n_in: w[0],
                    n_out: w[1],
                    w: off,
                    b: off + w[0] * w[1],
                    beta: off + w[0] * w[1] + w[1],
                    theta: off + w[0] * w[1] + w[1] + 1,
                };
                off = l.theta + 1;
                l
            })
            .collect()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.sizes.last().expect("sizes non-empty")
    }

    /// Effective `(beta, theta)` of layer `l`.
    pub fn lif(&self, l: usize) -> LifParams {
        let lay = self.layouts()[l];
        LifParams {
            beta: sigmoid(self.params[lay.beta]),
            theta: softplus(self.params[lay.theta]),
            v_reset: 0.0,
            slope: self.slope,
        }
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let lay = self.layouts()[l];
        &self.params[lay.w..lay.b]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let lay = self.layouts()[l];
        &mut self.params[lay.w..lay.b]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let lay = self.layouts()[l];
        &mut self.params[lay.b..lay.beta]
    }

    pub fn set_lif(&mut self, l: usize, beta: f64, theta: f64) {
        let lay = self.layouts()[l];
        self.params[lay.beta] = logit(beta);
        self.params[lay.theta] = softplus_inv(theta);
    }

    fn spike(&self, u: f64) -> f64 {
        match self.spike_fn {
            SpikeFn::Heaviside => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Smooth => 0.5 + u / (1.0 + self.slope * u.abs()),
        }
    }
}

/// Everything recorded during one forward pass of one sample. All tensors
/// are `t x units` row-major per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub unit: UnitKind,
    pub t: usize,
    /// Emitted spikes for LIF layers; activations for ReLU layers (the last
    /// ReLU layer holds the linear logits).
    pub spikes: Vec<Vec<f64>>,
    /// Pre-reset membrane potentials (LIF) or pre-activations (ReLU).
    pub membranes: Vec<Vec<f64>>,
    /// Synaptic input current `W x + b`.
    pub currents: Vec<Vec<f64>>,
    /// Per-step output scores: `membranes` of the last layer.
    pub logits: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl ForwardTrace {
    pub fn n_classes(&self) -> usize {
        *self.sizes.last().expect("sizes non-empty")
    }

    pub fn step_logits(&self, t: usize) -> &[f64] {
        let c = self.n_classes();
        &self.logits[t * c..(t + 1) * c]
    }

    /// Spikes summed over all layers, steps and units (zero for ReLU).
    pub fn total_spikes(&self) -> f64 {
        match self.unit {
            UnitKind::Lif => self.spikes.iter().flatten().sum(),
            UnitKind::Relu => 0.0,
        }
    }

    /// Per-unit spike counts of layer `l` summed over time.
    pub fn counts(&self, l: usize) -> Vec<f64> {
        let n = self.sizes[l + 1];
        let mut c = vec![0.0; n];
        for row in self.spikes[l].chunks_exact(n) {
            for (a, v) in c.iter_mut().zip(row) {
                *a += v;
            }
        }
        c
    }
}

/// Hidden-layer spike deletion applied to the transmitted signal only.
struct Deletion<'a> {
    p: f64,
    rng: &'a mut Stream,
}

pub fn forward(model: &NetworkModel, seq: &InputSequence) -> Result<ForwardTrace> {
    forward_impl(model, seq, None)
}

/// Forward pass in which every hidden-layer spike (or nonzero ReLU
/// activation) reaches the next layer only with probability `1 - p`.
/// The emitting neuron still resets.
pub fn forward_with_deletion(
    model: &NetworkModel,
    seq: &InputSequence,
    p: f64,
    rng: &mut Stream,
) -> Result<ForwardTrace> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("deletion probability {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return forward_impl(model, seq, None);
    }
    forward_impl(model, seq, Some(Deletion { p, rng }))
}

fn forward_impl(model: &NetworkModel, seq: &InputSequence, mut deletion: Option<Deletion<'_>>) -> Result<ForwardTrace> {
    if seq.width != model.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} does not match the network input {}",
            seq.width,
            model.input_dim()
        )));
    }
    let t_len = seq.t;
    let layouts = model.layouts();
    let nl = layouts.len();
    let mut spikes: Vec<Vec<f64>> = layouts.iter().map(|l| vec![0.0; t_len * l.n_out]).collect();
    let mut membranes = spikes.clone();
    let mut currents = spikes.clone();
    let lifs: Vec<LifParams> = (0..nl).map(|l| model.lif(l)).collect();
    let mut v: Vec<Vec<f64>> = layouts.iter().map(|l| vec![0.0; l.n_out]).collect();
    let mut x: Vec<f64> = Vec::new();
    let mut next: Vec<f64> = Vec::new();
    for t in 0..t_len {
        x.clear();
        x.extend_from_slice(seq.step(t));
        for (li, lay) in layouts.iter().enumerate() {
            let w = &model.params[lay.w..lay.b];
            let b = &model.params[lay.b..lay.beta];
            let off = t * lay.n_out;
            let cur = &mut currents[li][off..off + lay.n_out];
            for o in 0..lay.n_out {
                let row = &w[o * lay.n_in..(o + 1) * lay.n_in];
                cur[o] = b[o] + dot(row, &x);
            }
            next.clear();
            match model.unit {
                UnitKind::Lif => {
                    let p = lifs[li];
                    for o in 0..lay.n_out {
                        let v_pre = p.beta * v[li][o] + cur[o];
                        let s = model.spike(v_pre - p.theta);
                        membranes[li][off + o] = v_pre;
                        spikes[li][off + o] = s;
                        v[li][o] = match model.reset {
                            ResetMode::Soft => v_pre - s * p.theta,
                            ResetMode::Hard => v_pre * (1.0 - s),
                        };
                        let mut sent = s;
                        if li + 1 < nl {
                            if let Some(d) = deletion.as_mut() {
                                if s != 0.0 && d.rng.bernoulli(d.p) {
                                    sent = 0.0;
                                }
                            }
                        }
                        next.push(sent);
                    }
                }
                UnitKind::Relu => {
                    let last = li + 1 == nl;
                    for o in 0..lay.n_out {
                        let a = cur[o];
                        membranes[li][off + o] = a;
                        let h = if last { a } else { a.max(0.0) };
                        spikes[li][off + o] = h;
                        let mut sent = h;
                        if !last {
                            if let Some(d) = deletion.as_mut() {
                                if h != 0.0 && d.rng.bernoulli(d.p) {
                                    sent = 0.0;
                                }
                            }
                        }
                        next.push(sent);
                    }
                }
            }
            std::mem::swap(&mut x, &mut next);
        }
    }
    let logits = membranes[nl - 1].clone();
    Ok(ForwardTrace {
        unit: model.unit,
        t: t_len,
        spikes,
        membranes,
        currents,
        logits,
        sizes: model.sizes.clone(),
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn log_softmax_ce(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let lse = m + sum.ln();
    let probs = z.iter().map(|v| (v - lse).exp()).collect();
    (lse - z[label], probs)
}

/// Mean over steps of the softmax cross-entropy of the output scores.
pub fn loss(trace: &ForwardTrace, label: usize) -> Result<f64> {
    let c = trace.n_classes();
    if label >= c {
        return Err(invalid(format!("label {label} outside 0..{c}")));
    }
    Ok((0..trace.t)
        .map(|t| log_softmax_ce(trace.step_logits(t), label).0)
        .sum::<f64>()
        / trace.t as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    /// The output layer never fired; the class is the tie-break default.
    pub silent: bool,
}

/// Argmax of output spike counts (summed logits for ReLU nets); ties go to
/// the lowest index.
pub fn predict(trace: &ForwardTrace) -> Prediction {
    let c = trace.n_classes();
    let mut score = vec![0.0; c];
    let src = match trace.unit {
        UnitKind::Lif => &trace.spikes[trace.spikes.len() - 1],
        UnitKind::Relu => &trace.logits,
    };
    for row in src.chunks_exact(c) {
        for (a, v) in score.iter_mut().zip(row) {
            *a += v;
        }
    }
    let mut best = 0;
    for j in 1..c {
        if score[j] > score[best] {
            best = j;
        }
    }
    Prediction {
        class: best,
        silent: trace.unit == UnitKind::Lif && score.iter().all(|v| *v == 0.0),
    }
}

/// Loss of one sample and its gradient, accumulated into `grad`.
pub fn backward(
    model: &NetworkModel,
    trace: &ForwardTrace,
    seq: &InputSequence,
    label: usize,
    grad: &mut [f64],
) -> Result<f64> {
    if grad.len() != model.params.len() {
        return Err(Error::Shape("gradient buffer does not match the model".into()));
    }
    let c = trace.n_classes();
    if label >= c {
        return Err(invalid(format!("label {label} outside 0..{c}")));
    }
    let t_len = trace.t;
    let inv_t = 1.0 / t_len as f64;
    let mut total = 0.0;
    let mut g_direct = vec![0.0; t_len * c];
    for t in 0..t_len {
        let (l, probs) = log_softmax_ce(trace.step_logits(t), label);
        total += l;
        for j in 0..c {
            g_direct[t * c + j] = (probs[j] - if j == label { 1.0 } else { 0.0 }) * inv_t;
        }
    }
    backward_from_logits(model, trace, seq, &g_direct, grad)?;
    Ok(total * inv_t)
}

/// Backpropagate an arbitrary gradient on the per-step output scores
/// (`t x classes`, row-major), accumulating into `grad`.
pub fn backward_from_logits(
    model: &NetworkModel,
    trace: &ForwardTrace,
    seq: &InputSequence,
    g_direct: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    let c = trace.n_classes();
    let t_len = trace.t;
    if grad.len() != model.params.len() || g_direct.len() != t_len * c {
        return Err(Error::Shape("gradient buffers do not match the model".into()));
    }
    let layouts = model.layouts();
    let nl = layouts.len();

    // Gradient w.r.t. each layer's output signal, per step.
    let mut g_out: Vec<f64> = vec![0.0; t_len * c];
    for li in (0..nl).rev() {
        let lay = layouts[li];
        let n = lay.n_out;
        let mut g_in = vec![0.0; t_len * lay.n_in];
        let mut g_i = vec![0.0; n];
        let w = &model.params[lay.w..lay.b];
        match model.unit {
            UnitKind::Lif => {
                let p = model.lif(li);
                let mut dv = vec![0.0; n];
                let mut g_beta = 0.0;
                let mut g_theta = 0.0;
                for t in (0..t_len).rev() {
                    let off = t * n;
                    for o in 0..n {
                        let v_pre = trace.membranes[li][off + o];
                        let s = trace.spikes[li][off + o];
                        let sg = fast_sigmoid_grad(v_pre - p.theta, model.slope);
                        let direct = if li + 1 == nl { g_direct[off + o] } else { 0.0 };
                        let ext = if li + 1 == nl { 0.0 } else { g_out[off + o] };
                        let dvt = dv[o];
                        let (gv, gth) = match model.reset {
                            ResetMode::Soft => {
                                let gs = ext - p.theta * dvt;
                                (direct + dvt + gs * sg, -gs * sg - dvt * s)
                            }
                            ResetMode::Hard => {
                                let gs = ext - dvt * v_pre;
                                (direct + dvt * (1.0 - s) + gs * sg, -gs * sg)
                            }
                        };
                        g_theta += gth;
                        let v_prev = if t == 0 {
                            0.0
                        } else {
                            let vp = trace.membranes[li][off - n + o];
                            let sp = trace.spikes[li][off - n + o];
                            match model.reset {
                                ResetMode::Soft => vp - sp * p.theta,
                                ResetMode::Hard => vp * (1.0 - sp),
                            }
                        };
                        g_beta += gv * v_prev;
                        dv[o] = p.beta * gv;
                        g_i[o] = gv;
                    }
                    accumulate_affine(model, trace, seq, li, t, &g_i, w, grad, &mut g_in);
                }
                if model.learn_lif {
                    grad[lay.beta] += g_beta * p.beta * (1.0 - p.beta);
                    grad[lay.theta] += g_theta * sigmoid(model.params[lay.theta]);
                }
            }
            UnitKind::Relu => {
                for t in 0..t_len {
                    let off = t * n;
                    for o in 0..n {
                        g_i[o] = if li + 1 == nl {
                            g_direct[off + o]
                        } else if trace.membranes[li][off + o] > 0.0 {
                            g_out[off + o]
                        } else {
                            0.0
                        };
                    }
                    accumulate_affine(model, trace, seq, li, t, &g_i, w, grad, &mut g_in);
                }
            }
        }
        g_out = g_in;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn accumulate_affine(
    model: &NetworkModel,
    trace: &ForwardTrace,
    seq: &InputSequence,
    li: usize,
    t: usize,
    g_i: &[f64],
    w: &[f64],
    grad: &mut [f64],
    g_in: &mut [f64],
) {
    let lay = model.layouts()[li];
    let x: &[f64] = if li == 0 {
        seq.step(t)
    } else {
        let n_prev = lay.n_in;
        &trace.spikes[li - 1][t * n_prev..(t + 1) * n_prev]
    };
    let gx = &mut g_in[t * lay.n_in..(t + 1) * lay.n_in];
    for o in 0..lay.n_out {
        let g = g_i[o];
        if g == 0.0 {
            continue;
        }
        grad[lay.b + o] += g;
        let gw = &mut grad[lay.w + o * lay.n_in..lay.w + (o + 1) * lay.n_in];
        let row = &w[o * lay.n_in..(o + 1) * lay.n_in];
        for k in 0..lay.n_in {
            gw[k] += g * x[k];
            gx[k] += g * row[k];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    5
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(lr: f64, max_epochs: usize, seed: u64) -> Self {
        TrainConfig {
            lr,
            batch: 32,
            max_epochs,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(invalid("batch, max_epochs and patience must be >= 1"));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training passes (weights as they were for each batch).
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    /// Spikes emitted during the epoch's training passes, all layers.
    pub spikes: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy.
    pub model: NetworkModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// First epoch whose validation accuracy reaches 90 % of the maximum.
    pub convergence_epoch: usize,
    /// Training-pass spikes of the convergence epoch.
    pub spikes_at_convergence: f64,
}

/// Borrowed labelled split.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub inputs: &'a [InputSequence],
    pub labels: &'a [usize],
}

impl<'a> Split<'a> {
    pub fn new(inputs: &'a [InputSequence], labels: &'a [usize]) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Split { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub spikes: f64,
    pub silent: usize,
}

pub fn evaluate(model: &NetworkModel, split: Split<'_>) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(invalid("cannot evaluate an empty split"));
    }
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    let mut spikes = 0.0;
    let mut silent = 0;
    for (x, &y) in split.inputs.iter().zip(split.labels) {
        let tr = forward(model, x)?;
        let p = predict(&tr);
        correct += (p.class == y) as usize;
        silent += p.silent as usize;
        total_loss += loss(&tr, y)?;
        spikes += tr.total_spikes();
    }
    let n = split.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: total_loss / n,
        spikes,
        silent,
    })
}

/// Mini-batch Adam with early stopping on validation accuracy.
pub fn train(model: &NetworkModel, train_split: Split<'_>, val: Split<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() || val.is_empty() {
        return Err(invalid("training and validation splits must be non-empty"));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(model.params.len(), cfg);
    let mut rng = Stream::new(cfg.seed);
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut history = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, model.clone());
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut spikes = 0.0;
        for (bi, batch) in order.chunks(cfg.batch).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &train_split.inputs[i];
                let y = train_split.labels[i];
                let tr = forward(&model, x)?;
                correct += (predict(&tr).class == y) as usize;
                spikes += tr.total_spikes();
                let l = backward(&model, &tr, x, y, &mut grad)?;
                if !l.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at epoch {epoch}, batch {bi}"
                    )));
                }
                loss_sum += l;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {epoch}, batch {bi}"
                )));
            }
            adam.update(&mut model.params, &grad);
        }
        let ev = evaluate(&model, val)?;
        let n = train_split.len() as f64;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_accuracy: ev.accuracy,
            val_loss: ev.loss,
            spikes,
        });
        if ev.accuracy > best.1 {
            best = (epoch, ev.accuracy, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let conv = convergence_epoch(&history);
    let spikes_at_convergence = history[conv - 1].spikes;
    Ok(TrainOutcome {
        model: best.2,
        best_epoch: best.0,
        best_val_accuracy: best.1,
        convergence_epoch: conv,
        spikes_at_convergence,
        history,
    })
}

/// `min { e : acc_e >= 0.9 max(acc) }` over validation accuracy (1-based).
pub fn convergence_epoch(history: &[EpochStats]) -> usize {
    let max = history.iter().map(|h| h.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    history
        .iter()
        .find(|h| h.val_accuracy >= 0.9 * max)
        .map(|h| h.epoch)
        .unwrap_or(1)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DYNSNN\0\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    sizes: Vec<usize>,
    unit: UnitKind,
    slope: f64,
    reset: ResetMode,
    spike_fn: SpikeFn,
    learn_lif: bool,
    seed: u64,
    n_params: usize,
}

impl NetworkModel {
    /// Versioned binary checkpoint: magic, version, JSON header, raw f64
    /// parameters (decay and threshold stored unconstrained).
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            sizes: self.sizes.clone(),
            unit: self.unit,
            slope: self.slope,
            reset: self.reset,
            spike_fn: self.spike_fn,
            learn_lif: self.learn_lif,
            seed: self.seed,
            n_params: self.params.len(),
        };
        let meta = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = Vec::with_capacity(20 + meta.len() + 8 * self.params.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 20 || &buf[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("{} is not a network checkpoint", path.display())));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
        let body = 20 + meta_len;
        if buf.len() < body {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let h: CheckpointHeader = serde_json::from_slice(&buf[20..body]).map_err(|e| Error::Format(e.to_string()))?;
        if buf.len() != body + 8 * h.n_params {
            return Err(Error::Format("checkpoint payload does not match its header".into()));
        }
        let params: Vec<f64> = buf[body..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let model = NetworkModel {
            sizes: h.sizes,
            unit: h.unit,
            params,
            slope: h.slope,
            reset: h.reset,
            spike_fn: h.spike_fn,
            learn_lif: h.learn_lif,
            seed: h.seed,
        };
        let expected: usize = model.sizes.windows(2).map(|w| w[0] * w[1] + w[1] + 2).sum();
        if expected != model.params.len() {
            return Err(Error::Format(
                "checkpoint parameter count does not match layer sizes".into(),
            ));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn soft_reset_hand_example() {
        let (s, v) = lif_step(0.9, 0.2, &LifParams::default());
        assert_eq!(s, 1.0);
        assert_abs_diff_eq!(v, 0.055, epsilon = 1e-12);
        assert_eq!(lif_step(0.0, 0.0, &LifParams::default()), (0.0, 0.0));
    }

    #[test]
    fn surrogate_values() {
        let p = LifParams::default();
        assert_eq!(surrogate_grad(1.0, &p), 1.0);
        assert_abs_diff_eq!(surrogate_grad(1.0 + 1.0 / 25.0, &p), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(surrogate_grad(1.0 - 1.0 / 25.0, &p), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn single_unit_first_spike_at_step_two() {
        let mut m = NetworkModel::new(&[1, 1], UnitKind::Lif, 0).unwrap();
        m.weights_mut(0)[0] = 1.0;
        m.bias_mut(0)[0] = 0.0;
        let seq = InputSequence::repeated(&[0.5], 4);
        let tr = forward(&m, &seq).unwrap();
        assert_eq!(tr.spikes[0], vec![0.0, 0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(tr.membranes[0][2], 1.42625, epsilon = 1e-12);
    }

    #[test]
    fn parameter_transforms_roundtrip() {
        let m = NetworkModel::new(&[3, 4, 2], UnitKind::Lif, 1).unwrap();
        let p = m.lif(1);
        assert_abs_diff_eq!(p.beta, 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_ties_and_silence() {
        let tr = ForwardTrace {
            unit: UnitKind::Lif,
            t: 2,
            spikes: vec![vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]],
            membranes: vec![vec![0.0; 6]],
            currents: vec![vec![0.0; 6]],
            logits: vec![0.0; 6],
            sizes: vec![1, 3],
        };
        assert_eq!(
            predict(&tr),
            Prediction {
                class: 1,
                silent: false
            }
        );
        let silent = ForwardTrace {
            spikes: vec![vec![0.0; 6]],
            ..tr
        };
        assert_eq!(predict(&silent), Prediction { class: 0, silent: true });
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let mut m = NetworkModel::new(&[2, 10], UnitKind::Relu, 0).unwrap();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        let tr = forward(&m, &InputSequence::repeated(&[0.3, 0.7], 3)).unwrap();
        assert_abs_diff_eq!(loss(&tr, 4).unwrap(), 10f64.ln(), epsilon = 1e-12);
    }
}
