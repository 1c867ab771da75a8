//! Activity and representation measurements on recorded forward traces:
//! firing rates, population synchrony, pairwise correlation, rate
//! fidelity, robustness to spike deletion, PCA dimensionality, a logistic
//! linear probe and information-plane coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::infodyn::{mutual_info, MiTarget};
use crate::linalg::{symmetric_eigen, Pca};
use crate::rng::Stream;
use crate::snn::{forward_with_deletion, predict, ForwardTrace, NetworkModel, Split};
use crate::tasks::stratified_indices;

/// A per-layer measurement that may be undefined for that layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    /// `NaN` when `undefined` is set.
    pub value: f64,
    pub undefined: bool,
}

impl Flagged {
    fn ok(value: f64) -> Self {
        Flagged {
            value,
            undefined: false,
        }
    }

    fn none() -> Self {
        Flagged {
            value: f64::NAN,
            undefined: true,
        }
    }
}

fn check_batch(traces: &[ForwardTrace]) -> Result<usize> {
    let first = traces.first().ok_or_else(|| invalid("empty trace batch"))?;
    if traces.iter().any(|t| t.sizes != first.sizes || t.t != first.t) {
        return Err(Error::Shape(
            "traces in a batch must share network shape and length".into(),
        ));
    }
    Ok(first.spikes.len())
}

/// Mean spike density of each layer over samples, units and steps.
pub fn firing_rate(traces: &[ForwardTrace]) -> Result<Vec<f64>> {
    let nl = check_batch(traces)?;
    Ok((0..nl)
        .map(|l| {
            let total: f64 = traces.iter().map(|t| t.spikes[l].iter().sum::<f64>()).sum();
            let count: usize = traces.iter().map(|t| t.spikes[l].len()).sum();
            total / count as f64
        })
        .collect())
}

/// Population rate `a_t` of layer `l` in one trace.
pub fn population_rate(trace: &ForwardTrace, l: usize) -> Vec<f64> {
    let n = trace.sizes[l + 1];
    trace.spikes[l]
        .chunks_exact(n)
        .map(|row| row.iter().sum::<f64>() / n as f64)
        .collect()
}

/// CV over time of the population rate, per sample, averaged over the
/// samples whose layer was not silent. Undefined when all were silent.
pub fn synchrony_cv(traces: &[ForwardTrace]) -> Result<Vec<Flagged>> {
    let nl = check_batch(traces)?;
    if traces[0].t < 2 {
        return Err(invalid("synchrony needs at least 2 time steps"));
    }
    Ok((0..nl)
        .map(|l| {
            let cvs: Vec<f64> = traces
                .iter()
                .filter_map(|tr| {
                    let a = population_rate(tr, l);
                    let m = a.iter().sum::<f64>() / a.len() as f64;
                    if m <= 0.0 {
                        return None;
                    }
                    let sd = (a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
                    Some(sd / m)
                })
                .collect();
            if cvs.is_empty() {
                Flagged::none()
            } else {
                Flagged::ok(cvs.iter().sum::<f64>() / cvs.len() as f64)
            }
        })
        .collect())
}

const ACTIVE_STD: f64 = 1e-8;

/// Mean |Pearson rho| over pairs of active units of one spike raster
/// (`t x n`, row-major). `None` when fewer than two units are active.
pub fn raster_correlation(raster: &[f64], t: usize, n: usize) -> Option<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let col: Vec<f64> = (0..t).map(|k| raster[k * n + j]).collect();
        let m = col.iter().sum::<f64>() / t as f64;
        let centered: Vec<f64> = col.iter().map(|v| v - m).collect();
        let ss: f64 = centered.iter().map(|v| v * v).sum();
        if (ss / t as f64).sqrt() > ACTIVE_STD {
            let norm = ss.sqrt();
            cols.push(centered.into_iter().map(|v| v / norm).collect());
        }
    }
    if cols.len() < 2 {
        return None;
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for a in 0..cols.len() {
        for b in (a + 1)..cols.len() {
            let rho: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
            acc += rho.clamp(-1.0, 1.0).abs();
            pairs += 1;
        }
    }
    Some(acc / pairs as f64)
}

/// Per layer: time-axis correlation within each sample, averaged over the
/// samples where it is defined.
pub fn pairwise_correlation(traces: &[ForwardTrace]) -> Result<Vec<Flagged>> {
    let nl = check_batch(traces)?;
    Ok((0..nl)
        .map(|l| {
            let n = traces[0].sizes[l + 1];
            let vals: Vec<f64> = traces
                .iter()
                .filter_map(|tr| raster_correlation(&tr.spikes[l], tr.t, n))
                .collect();
            if vals.is_empty() {
                Flagged::none()
            } else {
                Flagged::ok(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect())
}

/// `std / (|mean| + 1e-12)` with the population std.
pub fn rate_cv(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(invalid("rate CV needs at least 2 values"));
    }
    let n = series.len() as f64;
    let m = series.iter().sum::<f64>() / n;
    let sd = (series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    Ok(sd / (m.abs() + 1e-12))
}

/// Everything per layer for one batch of traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityStats {
    pub firing_rate: Vec<f64>,
    pub synchrony_cv: Vec<Flagged>,
    pub correlation: Vec<Flagged>,
    /// CV over the batch-averaged population rate series.
    pub rate_cv: Vec<f64>,
    pub current_mean: Vec<f64>,
    pub current_std: Vec<f64>,
}

pub fn activity_stats(traces: &[ForwardTrace]) -> Result<ActivityStats> {
    let nl = check_batch(traces)?;
    let t = traces[0].t;
    let mut rcv = Vec::with_capacity(nl);
    let mut mu = Vec::with_capacity(nl);
    let mut sd = Vec::with_capacity(nl);
    for l in 0..nl {
        let mut series = vec![0.0; t];
        for tr in traces {
            for (s, v) in series.iter_mut().zip(population_rate(tr, l)) {
                *s += v / traces.len() as f64;
            }
        }
        rcv.push(if t >= 2 { rate_cv(&series)? } else { 0.0 });
        let all: Vec<f64> = traces.iter().flat_map(|tr| tr.currents[l].iter().copied()).collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        mu.push(m);
        sd.push((all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt());
    }
    Ok(ActivityStats {
        firing_rate: firing_rate(traces)?,
        synchrony_cv: synchrony_cv(traces)?,
        correlation: pairwise_correlation(traces)?,
        rate_cv: rcv,
        current_mean: mu,
        current_std: sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeletionPoint {
    pub p: f64,
    pub accuracy: f64,
}

/// Accuracy under hidden-layer spike deletion for every `p`, averaged over
/// `reps` repetitions (one pass when `p = 0`, which draws no randomness).
pub fn deletion_robustness(
    model: &NetworkModel,
    split: Split<'_>,
    ps: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Vec<DeletionPoint>> {
    if split.is_empty() || reps == 0 {
        return Err(invalid("deletion robustness needs samples and reps >= 1"));
    }
    if let Some(p) = ps.iter().find(|p| !(0.0..=0.8).contains(*p)) {
        return Err(invalid(format!("deletion probability {p} outside [0, 0.8]")));
    }
    let mut out = Vec::with_capacity(ps.len());
    for (pi, &p) in ps.iter().enumerate() {
        let runs = if p == 0.0 { 1 } else { reps };
        let mut acc = 0.0;
        for r in 0..runs {
            let mut rng = Stream::derive(seed, (pi * reps + r) as u64);
            let mut correct = 0usize;
            for (x, &y) in split.inputs.iter().zip(split.labels) {
                let tr = forward_with_deletion(model, x, p, &mut rng)?;
                correct += (predict(&tr).class == y) as usize;
            }
            acc += correct as f64 / split.len() as f64;
        }
        out.push(DeletionPoint {
            p,
            accuracy: acc / runs as f64,
        });
    }
    Ok(out)
}

/// Layer `l` of every trace flattened to `units * t` values per row.
pub fn flattened_reps(traces: &[ForwardTrace], l: usize) -> (Vec<f64>, usize) {
    let w = traces.first().map(|t| t.spikes[l].len()).unwrap_or(0);
    (traces.iter().flat_map(|t| t.spikes[l].iter().copied()).collect(), w)
}

/// Spike counts of layer `l` summed over time, one row per trace.
pub fn count_reps(traces: &[ForwardTrace], l: usize) -> (Vec<f64>, usize) {
    let w = traces.first().map(|t| t.sizes[l + 1]).unwrap_or(0);
    (traces.iter().flat_map(|t| t.counts(l)).collect(), w)
}

/// Smallest `k` whose leading covariance eigenvalues hold 95 % of the
/// variance. Uses the Gram matrix when there are fewer samples than
/// features, so the answer never exceeds `min(n - 1, d)`.
pub fn effective_dim(data: &[f64], n: usize, d: usize) -> Result<usize> {
    if n < 2 || data.len() != n * d {
        return Err(invalid(format!("effective_dim needs n >= 2 rows of width {d}")));
    }
    let eig: Vec<f64> = if d <= n {
        Pca::fit(data, n, d, d).eigenvalues
    } else {
        let mut mean = vec![0.0; d];
        for row in data.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let centered: Vec<f64> = data
            .chunks_exact(d)
            .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m))
            .collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = centered[i * d..(i + 1) * d]
                    .iter()
                    .zip(&centered[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / (n - 1) as f64;
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        symmetric_eigen(&gram, n, 1e-10)
            .values
            .iter()
            .map(|v| v.max(0.0))
            .collect()
    };
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let cap = (n - 1).min(d);
    let mut acc = 0.0;
    for (k, v) in eig.iter().enumerate() {
        acc += v;
        if acc >= 0.95 * total * (1.0 - 1e-12) {
            return Ok((k + 1).min(cap));
        }
    }
    Ok(cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Held-out accuracy.
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub iterations: usize,
}

const PROBE_L2: f64 = 1e-4;
const PROBE_MAX_ITERS: usize = 5000;
const PROBE_GRAD_TOL: f64 = 1e-6;

/// Held-out accuracy of an L2-regularized multinomial logistic regression
/// on standardized features, stratified 80/20 split.
pub fn linear_probe(x: &[f64], d: usize, labels: &[usize], seed: u64) -> Result<ProbeResult> {
    let n = labels.len();
    if d == 0 || x.len() != n * d {
        return Err(Error::Shape(format!("{} values for {n} rows of width {d}", x.len())));
    }
    let c = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let present = {
        let mut seen = vec![false; c];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|s| **s).count()
    };
    if present < 2 {
        return Err(invalid("linear probe needs at least 2 classes"));
    }
    let (train, test) = stratified_indices(labels, c, 0.2, seed)?;
    // Standardize with training statistics; constant columns become 0.
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in &train {
        for j in 0..d {
            mean[j] += x[i * d + j] / train.len() as f64;
        }
    }
    for &i in &train {
        for j in 0..d {
            sd[j] += (x[i * d + j] - mean[j]).powi(2) / train.len() as f64;
        }
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt());
    let standardized = |i: usize| -> Vec<f64> {
        (0..d)
            .map(|j| {
                if sd[j] > 1e-12 {
                    (x[i * d + j] - mean[j]) / sd[j]
                } else {
                    0.0
                }
            })
            .chain(std::iter::once(1.0))
            .collect()
    };
    let xt: Vec<Vec<f64>> = train.iter().map(|&i| standardized(i)).collect();
    let xs: Vec<Vec<f64>> = test.iter().map(|&i| standardized(i)).collect();
    let dp = d + 1;
    let nt = xt.len() as f64;

    // Step size 1/L with L bounding the Hessian: 0.5 lambda_max(X^T X / n) + l2.
    let lmax = {
        let mut v = vec![1.0 / (dp as f64).sqrt(); dp];
        let mut lam = 0.0;
        for _ in 0..100 {
            let mut w = vec![0.0; dp];
            for row in &xt {
                let s: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (wj, rj) in w.iter_mut().zip(row) {
                    *wj += s * rj / nt;
                }
            }
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lam = norm;
            v = w.into_iter().map(|a| a / norm).collect();
        }
        lam
    };
    let lr = 1.0 / (0.5 * lmax * 1.05 + PROBE_L2);
    let mut w = vec![0.0; c * dp];
    let mut iterations = 0;
    let mut probs = vec![0.0; c];
    for it in 0..PROBE_MAX_ITERS {
        iterations = it + 1;
        let mut g = vec![0.0; c * dp];
        for (row, &i) in xt.iter().zip(&train) {
            softmax_scores(&w, row, c, &mut probs);
            for k in 0..c {
                let e = probs[k] - if labels[i] == k { 1.0 } else { 0.0 };
                if e == 0.0 {
                    continue;
                }
                for (gj, rj) in g[k * dp..(k + 1) * dp].iter_mut().zip(row) {
                    *gj += e * rj / nt;
                }
            }
        }
        for (gj, wj) in g.iter_mut().zip(&w) {
            *gj += PROBE_L2 * wj;
        }
        let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        if gn < PROBE_GRAD_TOL {
            break;
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= lr * gj;
        }
    }
    let accuracy_of = |rows: &[Vec<f64>], idx: &[usize]| -> f64 {
        let mut probs = vec![0.0; c];
        let correct = rows
            .iter()
            .zip(idx)
            .filter(|(row, &i)| {
                softmax_scores(&w, row, c, &mut probs);
                let mut best = 0;
                for k in 1..c {
                    if probs[k] > probs[best] {
                        best = k;
                    }
                }
                best == labels[i]
            })
            .count();
        correct as f64 / rows.len() as f64
    };
    Ok(ProbeResult {
        accuracy: accuracy_of(&xs, &test),
        train_accuracy: accuracy_of(&xt, &train),
        iterations,
    })
}

fn softmax_scores(w: &[f64], row: &[f64], c: usize, out: &mut [f64]) {
    let dp = row.len();
    for k in 0..c {
        out[k] = w[k * dp..(k + 1) * dp].iter().zip(row).map(|(a, b)| a * b).sum();
    }
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in out.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    out.iter_mut().for_each(|v| *v /= s);
}

pub const IB_BINS: usize = 20;
pub const IB_PCA_DIMS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbPoint {
    /// Compression axis `I(T; X)` in bits.
    pub i_tx: f64,
    /// Prediction axis `I(T; Y)` in bits.
    pub i_ty: f64,
}

/// Information-plane coordinates of each layer representation
/// `(rows, width)` against the input representation and the labels.
pub fn ib_plane(layers: &[(Vec<f64>, usize)], input: (&[f64], usize), labels: &[usize]) -> Result<Vec<IbPoint>> {
    layers
        .iter()
        .map(|(rep, w)| {
            Ok(IbPoint {
                i_tx: mutual_info(rep, *w, MiTarget::Matrix(input.0, input.1), IB_BINS, IB_PCA_DIMS)?,
                i_ty: mutual_info(rep, *w, MiTarget::Labels(labels), IB_BINS, IB_PCA_DIMS)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::UnitKind;

    fn trace(spikes: Vec<f64>, t: usize, n: usize) -> ForwardTrace {
        ForwardTrace {
            unit: UnitKind::Lif,
            t,
            membranes: vec![vec![0.0; t * n]],
            currents: vec![vec![0.0; t * n]],
            logits: vec![0.0; t * n],
            spikes: vec![spikes],
            sizes: vec![1, n],
        }
    }

    #[test]
    fn rates_of_constant_rasters() {
        assert_eq!(firing_rate(&[trace(vec![1.0; 12], 4, 3)]).unwrap(), vec![1.0]);
        assert_eq!(firing_rate(&[trace(vec![0.0; 12], 4, 3)]).unwrap(), vec![0.0]);
    }

    #[test]
    fn alternating_population_rate_has_unit_cv() {
        let raster = vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let cv = synchrony_cv(&[trace(raster, 4, 2)]).unwrap();
        assert!((cv[0].value - 1.0).abs() < 1e-12);
        assert!(synchrony_cv(&[trace(vec![0.0; 8], 4, 2)]).unwrap()[0].undefined);
    }

    #[test]
    fn duplicated_trains_correlate_fully() {
        let raster = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((raster_correlation(&raster, 5, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(raster_correlation(&[1.0, 0.0, 1.0, 0.0], 2, 2).is_none());
    }

    #[test]
    fn rate_cv_examples() {
        assert_eq!(rate_cv(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!((rate_cv(&[-1.0, 3.0]).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rank_one_data_has_dimension_one() {
        let data: Vec<f64> = (0..20).flat_map(|i| [i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        assert_eq!(effective_dim(&data, 20, 3).unwrap(), 1);
    }

    #[test]
    fn separated_clusters_probe_perfectly() {
        let x: Vec<f64> = (0..60)
            .map(|i| {
                if i % 2 == 0 {
                    -5.0 + 0.01 * i as f64
                } else {
                    5.0 + 0.01 * i as f64
                }
            })
            .collect();
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        assert_eq!(linear_probe(&x, 1, &labels, 0).unwrap().accuracy, 1.0);
        assert!(linear_probe(&x, 1, &vec![1; 60], 0).is_err());
    }
}
