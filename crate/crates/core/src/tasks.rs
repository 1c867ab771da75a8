//! Datasets and environments: labelled feature matrices with CSV I/O,
//! synthetic blob and feature-binding generators, a PCA reducer, CartPole
//! dynamics and REINFORCE training of a policy network.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{encode, EncoderSpec, InputSequence};
use crate::error::{invalid, Error, Result};
use crate::linalg::Pca;
use crate::rng::Stream;
use crate::snn::{backward_from_logits, forward, Adam, NetworkModel, TrainConfig, UnitKind};

/// Row-major `n x d` features with integer labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub d: usize,
    pub n_classes: usize,
    /// Free-text provenance, e.g. the generator and its arguments.
    pub note: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        d: usize,
        n_classes: usize,
        note: impl Into<String>,
    ) -> Result<Self> {
        if d == 0 || labels.is_empty() || features.len() != labels.len() * d {
            return Err(Error::Shape(format!(
                "{} feature values for {} labels of width {d}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value at row {}, column {}",
                i / d,
                i % d
            )));
        }
        if let Some(r) = labels.iter().position(|&l| l >= n_classes) {
            return Err(invalid(format!(
                "label {} at row {r} outside 0..{n_classes}",
                labels[r]
            )));
        }
        Ok(Dataset {
            features,
            labels,
            d,
            n_classes,
            note: note.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(idx.len() * self.d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.d, self.n_classes, self.note.clone())
    }

    /// Stratified split: within every class, a `fraction` share (rounded)
    /// goes to the second part. Returns `(kept, held_out)`.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let (a, b) = stratified_indices(&self.labels, self.n_classes, fraction, seed)?;
        Ok((self.subset(&a)?, self.subset(&b)?))
    }

    /// Header `f0,...,f{d-1},label`, decimal floats, integer labels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<String> = (0..self.d).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the CSV schema written by [`Dataset::write_csv`]. The class
    /// count is `max label + 1`.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        let cols = header.len();
        if cols < 2 || &header[cols - 1] != "label" {
            return Err(Error::Format(format!(
                "{}: last column must be `label`",
                path.display()
            )));
        }
        for (j, name) in header.iter().take(cols - 1).enumerate() {
            if name != format!("f{j}") {
                return Err(Error::Format(format!(
                    "{}: column {j} is `{name}`, expected `f{j}`",
                    path.display()
                )));
            }
        }
        let d = cols - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != cols {
                return Err(Error::Format(format!(
                    "row {row} has {} fields, expected {cols}",
                    rec.len()
                )));
            }
            for j in 0..d {
                let v: f64 = rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {row}, column f{j}: `{}` is not a number", &rec[j])))?;
                features.push(v);
            }
            let l: usize = rec[d]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: label `{}` is not a non-negative integer", &rec[d])))?;
            labels.push(l);
        }
        let n_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        Dataset::new(features, labels, d, n_classes, format!("csv:{}", path.display()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Per-class shuffled split of row indices. Returns `(kept, held_out)`,
/// each sorted back into a shuffled global order.
pub fn stratified_indices(
    labels: &[usize],
    n_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut rng = Stream::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for members in by_class.iter_mut() {
        rng.shuffle(members);
        let cut = (members.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&members[..cut]);
        kept.extend_from_slice(&members[cut..]);
    }
    rng.shuffle(&mut kept);
    rng.shuffle(&mut held);
    if kept.is_empty() || held.is_empty() {
        return Err(invalid("split leaves one side empty"));
    }
    Ok((kept, held))
}

/// Isotropic Gaussian clusters around uniform random centres in `[0,1]^d`,
/// labels balanced to within one and shuffled.
pub fn gen_blobs(n: usize, d: usize, n_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 || n == 0 || d == 0 || !(spread >= 0.0) {
        return Err(invalid(format!(
            "blobs need n > 0, d > 0, C >= 2, spread >= 0; got {n}, {d}, {n_classes}, {spread}"
        )));
    }
    let mut rng = Stream::new(seed);
    let centers: Vec<f64> = (0..n_classes * d).map(|_| rng.uniform()).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    rng.shuffle(&mut labels);
    let mut features = Vec::with_capacity(n * d);
    for &l in &labels {
        for j in 0..d {
            features.push(centers[l * d + j] + spread * rng.normal());
        }
    }
    Dataset::new(
        features,
        labels,
        d,
        n_classes,
        format!("blobs(n={n}, d={d}, C={n_classes}, spread={spread}, seed={seed})"),
    )
}

pub const SHAPE_BAND: std::ops::Range<usize> = 125..250;
pub const COLOR_BAND: std::ops::Range<usize> = 250..375;

/// Feature-binding data. Positives carry both target patterns (ones over
/// the shape and colour bands); negatives switch each band fully on or off
/// at random, never both on. Gaussian noise of std `noise` everywhere.
/// Classes are exactly balanced; an odd `n` is reduced by one and noted.
pub fn gen_binding(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if dim < COLOR_BAND.end {
        return Err(invalid(format!("binding needs dim >= {}, got {dim}", COLOR_BAND.end)));
    }
    if n < 2 || !(noise >= 0.0) {
        return Err(invalid(format!(
            "binding needs n >= 2 and noise >= 0, got {n}, {noise}"
        )));
    }
    let mut note = format!("binding(n={n}, dim={dim}, noise={noise}, seed={seed})");
    let n_even = n - n % 2;
    if n_even != n {
        note.push_str(&format!("; odd n reduced to {n_even}"));
    }
    let mut rng = Stream::new(seed);
    let mut labels: Vec<usize> = (0..n_even).map(|i| i % 2).collect();
    rng.shuffle(&mut labels);
    let mut features = vec![0.0; n_even * dim];
    for (i, &l) in labels.iter().enumerate() {
        let row = &mut features[i * dim..(i + 1) * dim];
        let (shape, color) = if l == 1 {
            (true, true)
        } else {
            match rng.below(3) {
                0 => (false, false),
                1 => (true, false),
                _ => (false, true),
            }
        };
        if shape {
            row[SHAPE_BAND].iter_mut().for_each(|v| *v = 1.0);
        }
        if color {
            row[COLOR_BAND].iter_mut().for_each(|v| *v = 1.0);
        }
        if noise > 0.0 {
            for v in row.iter_mut() {
                *v += noise * rng.normal();
            }
        }
    }
    Dataset::new(features, labels, dim, 2, note)
}

/// A fitted PCA projection followed by per-column min-max scaling.
#[derive(Debug, Clone)]
pub struct PcaReduction {
    pub pca: Pca,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Fraction of total variance captured by the first `i + 1` components.
    pub cumulative_explained: Vec<f64>,
    /// Components beyond the data's rank are zero columns.
    pub rank_deficient: bool,
    pub rank: usize,
}

impl PcaReduction {
    /// Project and rescale new rows with the fitted transform (no clamping).
    pub fn transform(&self, data: &[f64]) -> Vec<f64> {
        let k = self.pca.k;
        let mut z = self.pca.transform(data);
        for row in z.chunks_exact_mut(k) {
            for j in 0..k {
                let span = self.max[j] - self.min[j];
                row[j] = if j < self.rank && span > 0.0 {
                    (row[j] - self.min[j]) / span
                } else {
                    0.0
                };
            }
        }
        z
    }
}

/// Centre, project on the top `d_out` principal directions and min-max
/// rescale each column to [0, 1].
pub fn pca_reduce(data: &[f64], n: usize, d: usize, d_out: usize) -> Result<(Vec<f64>, PcaReduction)> {
    if data.len() != n * d {
        return Err(Error::Shape(format!("{} values for {n} x {d}", data.len())));
    }
    if d_out == 0 || d_out > d || d_out > n.saturating_sub(1) {
        return Err(invalid(format!(
            "d_out = {d_out} must be in 1..=min(n - 1, D) = {}",
            d.min(n.saturating_sub(1))
        )));
    }
    let pca = Pca::fit(data, n, d, d_out);
    let top = pca.eigenvalues.first().copied().unwrap_or(0.0);
    let rank = pca
        .explained_variance
        .iter()
        .filter(|&&v| v > 1e-12 * top.max(1e-300))
        .count();
    let z = pca.transform(data);
    let mut min = vec![f64::INFINITY; d_out];
    let mut max = vec![f64::NEG_INFINITY; d_out];
    for row in z.chunks_exact(d_out) {
        for j in 0..d_out {
            min[j] = min[j].min(row[j]);
            max[j] = max[j].max(row[j]);
        }
    }
    let mut acc = 0.0;
    let cumulative_explained = pca
        .explained_variance
        .iter()
        .map(|v| {
            acc += v;
            if pca.total_variance > 0.0 {
                (acc / pca.total_variance).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    let red = PcaReduction {
        pca,
        min,
        max,
        cumulative_explained,
        rank_deficient: rank < d_out,
        rank,
    };
    let out = red.transform(data);
    Ok((out, red))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn in_bounds(&self) -> bool {
        self.x.abs() <= X_LIMIT && self.theta.abs() <= THETA_LIMIT
    }
}

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_LIMIT: f64 = 2.4;
pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const MAX_EPISODE_STEPS: usize = 500;

/// One explicit-Euler step of the classic cart-pole. Action 1 pushes right.
/// Returns the next state, the reward (1) and whether the bounds were left.
pub fn cartpole_step(s: CartPoleState, action: usize) -> (CartPoleState, f64, bool) {
    let force = if action == 1 { FORCE } else { -FORCE };
    let total = CART_MASS + POLE_MASS;
    let pml = POLE_MASS * HALF_LENGTH;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + pml * s.theta_dot * s.theta_dot * sin) / total;
    let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
    let x_acc = temp - pml * theta_acc * cos / total;
    let next = CartPoleState {
        x: s.x + TAU * s.x_dot,
        x_dot: s.x_dot + TAU * x_acc,
        theta: s.theta + TAU * s.theta_dot,
        theta_dot: s.theta_dot + TAU * theta_acc,
    };
    (next, 1.0, !next.in_bounds())
}

/// Episode wrapper with the 500-step limit.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub state: CartPoleState,
    pub steps: usize,
    pub done: bool,
}

impl CartPole {
    /// Every state variable uniform in [-0.05, 0.05].
    pub fn reset(rng: &mut Stream) -> Self {
        let mut u = || rng.uniform_range(-0.05, 0.05);
        CartPole {
            state: CartPoleState {
                x: u(),
                x_dot: u(),
                theta: u(),
                theta_dot: u(),
            },
            steps: 0,
            done: false,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<(CartPoleState, f64, bool)> {
        if self.done {
            return Err(invalid("episode is over; reset before stepping"));
        }
        if action > 1 {
            return Err(invalid(format!("action {action} not in {{0, 1}}")));
        }
        let (s, r, out) = cartpole_step(self.state, action);
        self.state = s;
        self.steps += 1;
        self.done = out || self.steps >= MAX_EPISODE_STEPS;
        Ok((s, r, self.done))
    }
}

/// `G_t = r_t + gamma G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// Standardize to zero mean and unit (population) std; a constant series
/// becomes all zeros.
pub fn normalize_returns(g: &[f64]) -> Vec<f64> {
    let n = g.len() as f64;
    let m = g.iter().sum::<f64>() / n;
    let sd = (g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    g.iter().map(|v| (v - m) / (sd + 1e-9)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlConfig {
    #[serde(default = "default_rl_lr")]
    pub lr: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_solve_threshold")]
    pub solve_threshold: f64,
    #[serde(default = "default_solve_window")]
    pub solve_window: usize,
    #[serde(default = "default_true")]
    pub normalize_returns: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_rl_lr() -> f64 {
    1e-3
}
fn default_gamma() -> f64 {
    0.99
}
fn default_episodes() -> usize {
    800
}
fn default_max_steps() -> usize {
    MAX_EPISODE_STEPS
}
fn default_solve_threshold() -> f64 {
    475.0
}
fn default_solve_window() -> usize {
    100
}
fn default_true() -> bool {
    true
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            lr: 1e-3,
            gamma: 0.99,
            episodes: 800,
            max_steps: MAX_EPISODE_STEPS,
            solve_threshold: 475.0,
            solve_window: 100,
            normalize_returns: true,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.lr >= 0.0) || self.episodes == 0 || self.max_steps == 0 || self.solve_window == 0 {
            return Err(invalid("lr >= 0 and episodes, max_steps, solve_window >= 1 required"));
        }
        Ok(())
    }
}

/// How observations reach the policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum PolicyInput {
    /// The raw 4-vector as a single static step.
    PassThrough,
    Encoded {
        encoder: EncoderSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub ret: f64,
    pub steps: usize,
    pub spikes: f64,
    /// Mean return over the trailing window (shorter at the start).
    pub running_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlHistory {
    pub episodes: Vec<EpisodeRecord>,
    /// First episode (1-based) at which the trailing-window mean reached the
    /// solve threshold over a full window.
    pub solved_at: Option<usize>,
}

impl RlHistory {
    /// Mean return of the last `window` episodes.
    pub fn final_mean(&self, window: usize) -> f64 {
        let k = window.min(self.episodes.len()).max(1);
        self.episodes[self.episodes.len() - k..]
            .iter()
            .map(|e| e.ret)
            .sum::<f64>()
            / k as f64
    }

    pub fn mean_spikes(&self) -> f64 {
        self.episodes.iter().map(|e| e.spikes).sum::<f64>() / self.episodes.len().max(1) as f64
    }
}

fn observation_input(input: &PolicyInput, obs: &[f64; 4], rng: &mut Stream) -> Result<InputSequence> {
    match input {
        PolicyInput::PassThrough => Ok(InputSequence::repeated(obs, 1)),
        PolicyInput::Encoded { encoder } => encode(encoder, obs, rng),
    }
}

/// REINFORCE with Adam on `-sum_t log pi(a_t | s_t) G_t`. Action logits are
/// the output scores averaged over the encoding's time steps.
pub fn reinforce_train(
    policy: &NetworkModel,
    input: &PolicyInput,
    cfg: &RlConfig,
) -> Result<(NetworkModel, RlHistory)> {
    cfg.validate()?;
    if policy.n_classes() != 2 {
        return Err(invalid(format!("policy needs 2 outputs, has {}", policy.n_classes())));
    }
    let expected_width = match input {
        PolicyInput::PassThrough => 4,
        PolicyInput::Encoded { encoder } => encoder.width(4),
    };
    if policy.input_dim() != expected_width {
        return Err(Error::Shape(format!(
            "policy input {} does not match observation width {expected_width}",
            policy.input_dim()
        )));
    }
    let mut model = policy.clone();
    let mut adam = Adam::new(model.params.len(), &TrainConfig::new(cfg.lr, 1, cfg.seed));
    let mut env_rng = Stream::derive(cfg.seed, 0);
    let mut act_rng = Stream::derive(cfg.seed, 1);
    let mut enc_rng = Stream::derive(cfg.seed, 2);
    let mut grad = vec![0.0; model.params.len()];
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.solve_window);
    let mut history = RlHistory {
        episodes: Vec::with_capacity(cfg.episodes),
        solved_at: None,
    };
    for episode in 1..=cfg.episodes {
        let mut env = CartPole::reset(&mut env_rng);
        let mut steps_data = Vec::new();
        let mut rewards = Vec::new();
        let mut spikes = 0.0;
        loop {
            let obs = env.state.to_array();
            let seq = observation_input(input, &obs, &mut enc_rng)?;
            let trace = forward(&model, &seq)?;
            if model.unit == UnitKind::Lif {
                spikes += trace.total_spikes();
            }
            let mut logits = [0.0; 2];
            for t in 0..trace.t {
                let z = trace.step_logits(t);
                logits[0] += z[0] / trace.t as f64;
                logits[1] += z[1] / trace.t as f64;
            }
            let m = logits[0].max(logits[1]);
            let e0 = (logits[0] - m).exp();
            let e1 = (logits[1] - m).exp();
            let p1 = e1 / (e0 + e1);
            if !p1.is_finite() {
                return Err(Error::Numerical(format!("non-finite policy at episode {episode}")));
            }
            let action = usize::from(act_rng.uniform() < p1);
            let (_, r, done) = env.step(action)?;
            rewards.push(r);
            steps_data.push((seq, trace, action, [1.0 - p1, p1]));
            if done || env.steps >= cfg.max_steps {
                break;
            }
        }
        let ret: f64 = rewards.iter().sum();
        let g = discounted_returns(&rewards, cfg.gamma);
        let weights = if cfg.normalize_returns {
            normalize_returns(&g)
        } else {
            g
        };
        grad.iter_mut().for_each(|v| *v = 0.0);
        for ((seq, trace, action, probs), w) in steps_data.iter().zip(&weights) {
            // d(-w log p_a)/d logit_j = -w (1[j = a] - p_j), spread evenly over steps.
            let t_len = trace.t;
            let mut g_direct = vec![0.0; t_len * 2];
            for t in 0..t_len {
                for j in 0..2 {
                    let onehot = if j == *action { 1.0 } else { 0.0 };
                    g_direct[t * 2 + j] = -w * (onehot - probs[j]) / t_len as f64;
                }
            }
            backward_from_logits(&model, trace, seq, &g_direct, &mut grad)?;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite policy gradient at episode {episode}"
            )));
        }
        adam.update(&mut model.params, &grad);
        if window.len() == cfg.solve_window {
            window.pop_front();
        }
        window.push_back(ret);
        let running_mean = window.iter().sum::<f64>() / window.len() as f64;
        if history.solved_at.is_none() && window.len() == cfg.solve_window && running_mean >= cfg.solve_threshold {
            history.solved_at = Some(episode);
        }
        history.episodes.push(EpisodeRecord {
            episode,
            ret,
            steps: rewards.len(),
            spikes,
            running_mean,
        });
    }
    Ok((model, history))
}

/// Append one JSON object per episode.
pub fn write_rl_history(path: &Path, history: &RlHistory) -> Result<()> {
    let mut out = String::new();
    for e in &history.episodes {
        out.push_str(&serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
