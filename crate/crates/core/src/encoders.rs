//! Feature-vector encoders producing the per-step input of the network:
//! the dynamical encoder plus the common spike-coding baselines.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynsys::{encode_feature, EncodingConfig, SystemParams};
use crate::error::{invalid, Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    AnalogCurrent,
    BinarySpikes,
}

/// Per-step input, `t x width` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSequence {
    pub values: Vec<f64>,
    pub t: usize,
    pub width: usize,
    pub kind: InputKind,
}

impl InputSequence {
    pub fn new(values: Vec<f64>, t: usize, width: usize, kind: InputKind) -> Result<Self> {
        if t == 0 || values.len() != t * width {
            return Err(Error::Shape(format!(
                "{} values cannot form a {t} x {width} sequence",
                values.len()
            )));
        }
        Ok(InputSequence { values, t, width, kind })
    }

    /// Static vector repeated for `t` steps.
    pub fn repeated(features: &[f64], t: usize) -> Self {
        let mut values = Vec::with_capacity(t * features.len());
        for _ in 0..t {
            values.extend_from_slice(features);
        }
        InputSequence {
            values,
            t,
            width: features.len(),
            kind: InputKind::AnalogCurrent,
        }
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn spike_count(&self) -> f64 {
        match self.kind {
            InputKind::BinarySpikes => self.values.iter().sum(),
            InputKind::AnalogCurrent => 0.0,
        }
    }
}

fn default_steps() -> usize {
    5
}
fn default_threshold() -> f64 {
    0.1
}
fn default_burst_threshold() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    /// Each feature seeds a trajectory; its sampled `(x, y, z)` states are
    /// concatenated feature by feature.
    Dynamical {
        system: SystemParams,
        #[serde(default)]
        encoding: EncodingConfig,
    },
    /// Bernoulli spikes with probability equal to the feature.
    Rate {
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// One spike per feature at step `round((1 - f) (T - 1))`.
    Latency {
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// Spike at step `t` iff `sin(2 pi f - t) >= 0`.
    Phase {
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// Accumulator starting at the feature emits one spike per step while it
    /// holds at least `threshold`, losing `threshold` per spike.
    Ttfs {
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Spike where the difference to the preceding feature exceeds
    /// `threshold`; the pattern repeats every step.
    Delta {
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Spike while the feature reaches an adaptive threshold that shrinks by
    /// `decay` after each spike and resets after a silent step.
    Burst {
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_burst_threshold")]
        threshold: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
    /// Features replicated as analog current.
    Default {
        #[serde(default = "default_steps")]
        steps: usize,
    },
}

/// Tolerance for accumulator comparisons, so that exact multiples of the
/// threshold count as reached despite rounding.
const ACC_TOL: f64 = 1e-9;

impl EncoderSpec {
    pub fn dynamical(system: SystemParams, encoding: EncodingConfig) -> Self {
        EncoderSpec::Dynamical { system, encoding }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderSpec::Dynamical { .. } => "dynamical",
            EncoderSpec::Rate { .. } => "rate",
            EncoderSpec::Latency { .. } => "latency",
            EncoderSpec::Phase { .. } => "phase",
            EncoderSpec::Ttfs { .. } => "ttfs",
            EncoderSpec::Delta { .. } => "delta",
            EncoderSpec::Burst { .. } => "burst",
            EncoderSpec::Default { .. } => "default",
        }
    }

    /// Number of time steps produced.
    pub fn steps(&self) -> usize {
        match self {
            EncoderSpec::Dynamical { encoding, .. } => encoding.n_steps,
            EncoderSpec::Rate { steps }
            | EncoderSpec::Latency { steps }
            | EncoderSpec::Phase { steps }
            | EncoderSpec::Ttfs { steps, .. }
            | EncoderSpec::Delta { steps, .. }
            | EncoderSpec::Burst { steps, .. }
            | EncoderSpec::Default { steps } => *steps,
        }
    }

    /// Width of each step for `d` input features.
    pub fn width(&self, d: usize) -> usize {
        match self {
            EncoderSpec::Dynamical { .. } => 3 * d,
            _ => d,
        }
    }

    pub fn kind(&self) -> InputKind {
        match self {
            EncoderSpec::Dynamical { .. } | EncoderSpec::Default { .. } => InputKind::AnalogCurrent,
            _ => InputKind::BinarySpikes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps() == 0 {
            return Err(invalid("encoder needs at least one time step"));
        }
        match self {
            EncoderSpec::Dynamical { system, encoding } => {
                system.validate()?;
                encoding.validate()
            }
            EncoderSpec::Ttfs { threshold, .. } | EncoderSpec::Delta { threshold, .. } => {
                if !(*threshold > 0.0) {
                    return Err(invalid(format!("threshold must be > 0, got {threshold}")));
                }
                Ok(())
            }
            EncoderSpec::Burst { threshold, decay, .. } => {
                if !(*threshold > 0.0) {
                    return Err(invalid(format!("threshold must be > 0, got {threshold}")));
                }
                if !(*decay > 0.0 && *decay < 1.0) {
                    return Err(invalid(format!("decay must lie in (0, 1), got {decay}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn needs_unit_interval(&self) -> bool {
        matches!(
            self,
            EncoderSpec::Rate { .. }
                | EncoderSpec::Latency { .. }
                | EncoderSpec::Phase { .. }
                | EncoderSpec::Ttfs { .. }
        )
    }
}

/// Encode one feature vector.
pub fn encode(spec: &EncoderSpec, features: &[f64], rng: &mut Stream) -> Result<InputSequence> {
    spec.validate()?;
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature {i} = {}", features[i])));
    }
    if spec.needs_unit_interval() {
        if let Some(i) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!(
                "{} encoding needs features in [0, 1]; feature {i} = {}",
                spec.name(),
                features[i]
            )));
        }
    }
    let t = spec.steps();
    let d = features.len();
    let width = spec.width(d);
    let mut out = vec![0.0; t * width];
    match spec {
        EncoderSpec::Dynamical { system, encoding } => {
            for (j, &f) in features.iter().enumerate() {
                let states = encode_feature(system, f, encoding)?;
                for (k, s) in states.iter().enumerate() {
                    let base = k * width + 3 * j;
                    out[base] = s.x;
                    out[base + 1] = s.y;
                    out[base + 2] = s.z;
                }
            }
        }
        EncoderSpec::Rate { .. } => {
            for k in 0..t {
                for (j, &f) in features.iter().enumerate() {
                    out[k * width + j] = if rng.bernoulli(f) { 1.0 } else { 0.0 };
                }
            }
        }
        EncoderSpec::Latency { .. } => {
            for (j, &f) in features.iter().enumerate() {
                out[latency_step(f, t) * width + j] = 1.0;
            }
        }
        EncoderSpec::Phase { .. } => {
            for k in 0..t {
                for (j, &f) in features.iter().enumerate() {
                    if (f * std::f64::consts::TAU - k as f64).sin() >= 0.0 {
                        out[k * width + j] = 1.0;
                    }
                }
            }
        }
        EncoderSpec::Ttfs { threshold, .. } => {
            for (j, &f) in features.iter().enumerate() {
                for k in 0..ttfs_count(f, *threshold).min(t) {
                    out[k * width + j] = 1.0;
                }
            }
        }
        EncoderSpec::Delta { threshold, .. } => {
            for j in 0..d {
                let prev = if j == 0 { 0.0 } else { features[j - 1] };
                if features[j] - prev > *threshold {
                    for k in 0..t {
                        out[k * width + j] = 1.0;
                    }
                }
            }
        }
        EncoderSpec::Burst { threshold, decay, .. } => {
            for (j, &f) in features.iter().enumerate() {
                let mut thr = *threshold;
                for k in 0..t {
                    if f >= thr {
                        out[k * width + j] = 1.0;
                        thr *= decay;
                    } else {
                        thr = *threshold;
                    }
                }
            }
        }
        EncoderSpec::Default { .. } => {
            for k in 0..t {
                out[k * width..(k + 1) * width].copy_from_slice(features);
            }
        }
    }
    InputSequence::new(out, t, width, spec.kind())
}

/// Spike step of the latency code: value 1 fires at step 0, value 0 last.
pub fn latency_step(f: f64, t: usize) -> usize {
    ((1.0 - f) * (t - 1) as f64).round() as usize
}

/// Number of spikes the threshold accumulator emits for `f`, before the cap
/// of one spike per step.
pub fn ttfs_count(f: f64, threshold: f64) -> usize {
    if f < threshold * (1.0 - ACC_TOL) {
        0
    } else {
        (f / threshold + ACC_TOL).floor() as usize
    }
}

/// Encode every row of an `n x d` matrix. Row `i` draws from
/// `Stream::derive(seed, i)`, so the result does not depend on row order
/// or on how rows are distributed over workers.
pub fn batch_encode(spec: &EncoderSpec, data: &[f64], d: usize, seed: u64) -> Result<Vec<InputSequence>> {
    if d == 0 {
        return if data.is_empty() {
            Ok(Vec::new())
        } else {
            Err(Error::Shape("zero-width rows".into()))
        };
    }
    if !data.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of width {d}",
            data.len()
        )));
    }
    data.chunks_exact(d)
        .enumerate()
        .map(|(row, x)| {
            let mut rng = Stream::derive(seed, row as u64);
            encode(spec, x, &mut rng).map_err(|e| Error::Row {
                row,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Header of an encoded-tensor cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    /// `[n, t, width]`.
    pub shape: [usize; 3],
    pub dtype: String,
    pub seed: u64,
    pub spec_hash: String,
    pub kind: InputKind,
}

const CACHE_MAGIC: &[u8; 8] = b"DYNENC01";

/// Hex SHA-256 over the encoder spec, the data and the seed.
pub fn cache_key(spec: &EncoderSpec, data: &[f64], d: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("encoder spec serializes"));
    h.update((d as u64).to_le_bytes());
    for v in data {
        h.update(v.to_le_bytes());
    }
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

pub fn write_cache(path: &Path, header: &CacheHeader, seqs: &[InputSequence]) -> Result<()> {
    let [n, t, w] = header.shape;
    if seqs.len() != n || seqs.iter().any(|s| s.t != t || s.width != w) {
        return Err(Error::Shape("sequences do not match the cache header".into()));
    }
    let meta = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + meta.len() + n * t * w * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    for s in seqs {
        for v in &s.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<(CacheHeader, Vec<InputSequence>)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[..8] != CACHE_MAGIC {
        return Err(Error::Format(format!("{} is not an encoder cache", path.display())));
    }
    let meta_len = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16 + meta_len;
    if buf.len() < body {
        return Err(Error::Format("truncated cache header".into()));
    }
    let header: CacheHeader = serde_json::from_slice(&buf[16..body]).map_err(|e| Error::Format(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let [n, t, w] = header.shape;
    if buf.len() != body + n * t * w * 8 {
        return Err(Error::Format("cache payload size does not match its shape".into()));
    }
    let values: Vec<f64> = buf[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let seqs = values
        .chunks_exact(t * w)
        .map(|c| InputSequence {
            values: c.to_vec(),
            t,
            width: w,
            kind: header.kind,
        })
        .collect();
    Ok((header, seqs))
}

/// [`batch_encode`] backed by a cache file in `dir` named by [`cache_key`].
pub fn batch_encode_cached(
    spec: &EncoderSpec,
    data: &[f64],
    d: usize,
    seed: u64,
    dir: &Path,
) -> Result<Vec<InputSequence>> {
    let key = cache_key(spec, data, d, seed);
    let path = dir.join(format!("{key}.enc"));
    if path.exists() {
        if let Ok((header, seqs)) = read_cache(&path) {
            if header.spec_hash == key && header.seed == seed {
                return Ok(seqs);
            }
        }
    }
    let seqs = batch_encode(spec, data, d, seed)?;
    if !seqs.is_empty() {
        fs::create_dir_all(dir)?;
        let header = CacheHeader {
            shape: [seqs.len(), seqs[0].t, seqs[0].width],
            dtype: "f64".into(),
            seed,
            spec_hash: key,
            kind: spec.kind(),
        };
        write_cache(&path, &header, &seqs)?;
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(spec: EncoderSpec, f: &[f64]) -> InputSequence {
        encode(&spec, f, &mut Stream::new(0)).unwrap()
    }

    #[test]
    fn ttfs_hand_example() {
        let s = enc(
            EncoderSpec::Ttfs {
                steps: 5,
                threshold: 0.1,
            },
            &[0.25],
        );
        assert_eq!(s.values, vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ttfs_count(0.2, 0.1), 2);
        assert_eq!(ttfs_count(0.3, 0.1), 3);
        assert_eq!(ttfs_count(0.0999, 0.1), 0);
    }

    #[test]
    fn phase_fires_at_quarter_turn() {
        let s = enc(EncoderSpec::Phase { steps: 5 }, &[0.25]);
        assert_eq!(s.values[0], 1.0);
    }

    #[test]
    fn latency_extremes() {
        let s = enc(EncoderSpec::Latency { steps: 5 }, &[1.0, 0.0, 0.5]);
        assert_eq!(s.step(0), &[1.0, 0.0, 0.0]);
        assert_eq!(s.step(2), &[0.0, 0.0, 1.0]);
        assert_eq!(s.step(4), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn delta_marks_rising_edges() {
        let s = enc(
            EncoderSpec::Delta {
                steps: 2,
                threshold: 0.1,
            },
            &[0.5, 0.55, 0.9, 0.2],
        );
        assert_eq!(s.step(0), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.step(0), s.step(1));
    }

    #[test]
    fn burst_threshold_decays_then_resets() {
        let s = enc(
            EncoderSpec::Burst {
                steps: 4,
                threshold: 0.5,
                decay: 0.95,
            },
            &[0.49, 0.5],
        );
        assert_eq!(s.values, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalized_encoders_reject_out_of_range() {
        let err = encode(&EncoderSpec::Rate { steps: 5 }, &[1.5], &mut Stream::new(0));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        assert!(encode(&EncoderSpec::Default { steps: 5 }, &[1.5], &mut Stream::new(0)).is_ok());
    }

    #[test]
    fn dynamical_lorenz_zero_features() {
        let spec = EncoderSpec::dynamical(SystemParams::lorenz(), EncodingConfig::default());
        let s = enc(spec, &[0.0; 7]);
        assert_eq!((s.t, s.width), (5, 21));
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_reports_failing_row() {
        let err = batch_encode(&EncoderSpec::Rate { steps: 3 }, &[0.1, 0.2, 0.3, 2.0], 2, 0).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn spec_serde_defaults() {
        let spec: EncoderSpec = serde_json::from_str(r#"{"kind":"burst"}"#).unwrap();
        assert_eq!(
            spec,
            EncoderSpec::Burst {
                steps: 5,
                threshold: 0.5,
                decay: 0.95
            }
        );
    }
}
