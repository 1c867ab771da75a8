//! Information-dynamics estimators: active information storage of each
//! trajectory axis, autocorrelation time, and binned mutual information.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dynsys::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::linalg::Pca;
use crate::rng::Stream;

/// Laplace smoothing added to every histogram cell.
pub const SMOOTHING: f64 = 1e-10;

/// Shortest series accepted by [`ais`].
pub const AIS_MIN_LEN: usize = 50;

/// Shortest series accepted by [`acf`].
pub const ACF_MIN_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisResult {
    /// Bits per axis (x, y, z).
    pub per_axis: [f64; 3],
    pub mean: f64,
    /// Axes with zero variance; their AIS is reported as 0.
    pub degenerate: [bool; 3],
}

/// Active information storage `I(X_t; X_{t-1})` of each axis of a trajectory,
/// averaged over the three axes.
pub fn ais(traj: &Trajectory, bins: usize) -> Result<AisResult> {
    if traj.len() < AIS_MIN_LEN {
        return Err(invalid(format!(
            "AIS needs at least {AIS_MIN_LEN} states, got {}",
            traj.len()
        )));
    }
    let mut per_axis = [0.0; 3];
    let mut degenerate = [false; 3];
    for axis in 0..3 {
        match ais_series(&traj.axis(axis), bins) {
            Ok(v) => per_axis[axis] = v,
            Err(Error::ZeroVariance(_)) => degenerate[axis] = true,
            Err(e) => return Err(e),
        }
    }
    Ok(AisResult {
        per_axis,
        mean: per_axis.iter().sum::<f64>() / 3.0,
        degenerate,
    })
}

/// AIS of a single series in bits: z-score, clip to `[-5, 5]`, then the
/// smoothed plug-in MI between consecutive samples on a `bins x bins` grid.
/// Pairs touching a non-finite sample are skipped.
pub fn ais_series(series: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(invalid(format!("bins must be >= 2, got {bins}")));
    }
    let finite: Vec<f64> = series.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(invalid("AIS series has fewer than two finite samples"));
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let std = (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::ZeroVariance("AIS series is constant".into()));
    }
    let z: Vec<f64> = series
        .iter()
        .map(|v| {
            if v.is_finite() {
                ((v - mean) / std).clamp(-5.0, 5.0)
            } else {
                f64::NAN
            }
        })
        .collect();
    let (lo, hi) = z
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let bin = |v: f64| -> usize {
        if hi > lo {
            (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let mut counts = vec![0.0f64; bins * bins];
    for w in z.windows(2) {
        if w[0].is_finite() && w[1].is_finite() {
            counts[bin(w[1]) * bins + bin(w[0])] += 1.0;
        }
    }
    let mi = smoothed_mi(&counts, bins, bins);
    Ok(mi.clamp(0.0, (bins as f64).log2()))
}

/// Smoothed plug-in MI in bits of a dense `ka x kb` count table, with
/// `P(i,j) = (n_ij + e) / (N + ka kb e)` and marginals smoothed the same way.
fn smoothed_mi(counts: &[f64], ka: usize, kb: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    let mut row = vec![0.0; ka];
    let mut col = vec![0.0; kb];
    for i in 0..ka {
        for j in 0..kb {
            row[i] += counts[i * kb + j];
            col[j] += counts[i * kb + j];
        }
    }
    let zj = total + (ka * kb) as f64 * SMOOTHING;
    let pa: Vec<f64> = row
        .iter()
        .map(|c| (c + SMOOTHING) / (total + ka as f64 * SMOOTHING))
        .collect();
    let pb: Vec<f64> = col
        .iter()
        .map(|c| (c + SMOOTHING) / (total + kb as f64 * SMOOTHING))
        .collect();
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let p = (counts[i * kb + j] + SMOOTHING) / zj;
            mi += p * (p / (pa[i] * pb[j])).log2();
        }
    }
    mi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// Lag times `k dt`, starting at 0.
    pub lags: Vec<f64>,
    pub acf: Vec<f64>,
    /// First time the ACF drops below `1/e`, linearly interpolated. When it
    /// never does, this is the longest lag evaluated and `exceeds_window` is set.
    pub tau_corr: f64,
    pub exceeds_window: bool,
}

/// Normalized autocovariance
/// `(<x(t) x(t+tau)> - <x>^2) / (<x^2> - <x>^2)`: the lagged product is
/// averaged over the overlapping samples, the moments over the whole series.
/// Estimates are clamped to `[-1, 1]`. Lags are evaluated until the first
/// `1/e` crossing or the end of the series.
pub fn acf(series: &[f64], dt: f64) -> Result<AcfResult> {
    ensemble_acf(&[series], dt)
}

/// ACF averaged lag-by-lag over several series (e.g. the axes of an
/// ensemble of trajectories), evaluated up to the shortest series.
pub fn ensemble_acf<S: AsRef<[f64]>>(series: &[S], dt: f64) -> Result<AcfResult> {
    if series.is_empty() {
        return Err(invalid("ACF needs at least one series"));
    }
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    let mut prepared = Vec::with_capacity(series.len());
    for s in series {
        prepared.push(Centered::new(s.as_ref())?);
    }
    let n = prepared.iter().map(|p| p.c.len()).min().unwrap_or(0);
    let max_lag = n - 2;
    let threshold = (-1.0f64).exp();
    let mut values = vec![1.0];
    let mut tau = None;
    for lag in 1..=max_lag {
        let r = prepared.iter().map(|p| p.at(lag)).sum::<f64>() / prepared.len() as f64;
        values.push(r);
        if r < threshold {
            let prev = values[lag - 1];
            let frac = (prev - threshold) / (prev - r);
            tau = Some((lag as f64 - 1.0 + frac) * dt);
            break;
        }
    }
    let lags = (0..values.len()).map(|k| k as f64 * dt).collect();
    let (tau_corr, exceeds_window) = match tau {
        Some(t) => (t, false),
        None => ((values.len() - 1) as f64 * dt, true),
    };
    Ok(AcfResult {
        lags,
        acf: values,
        tau_corr,
        exceeds_window,
    })
}

/// Series shifted by its mean, with the moments the ACF needs.
struct Centered {
    c: Vec<f64>,
    mean: f64,
    var: f64,
}

impl Centered {
    fn new(series: &[f64]) -> Result<Self> {
        if series.len() < ACF_MIN_LEN {
            return Err(invalid(format!(
                "ACF needs at least {ACF_MIN_LEN} samples, got {}",
                series.len()
            )));
        }
        if let Some(i) = series.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ACF sample {i}")));
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
        let var = c.iter().map(|v| v * v).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::ZeroVariance("ACF series is constant".into()));
        }
        Ok(Centered { c, mean, var })
    }

    /// `x_i x_j - m^2 = c_i c_j + m (c_i + c_j)`, averaged over the overlap.
    fn at(&self, lag: usize) -> f64 {
        let m = self.c.len() - lag;
        let (a, b) = (&self.c[..m], &self.c[lag..]);
        let mut prod = 0.0;
        let mut sum = 0.0;
        for (x, y) in a.iter().zip(b) {
            prod += x * y;
            sum += x + y;
        }
        ((prod + self.mean * sum) / m as f64 / self.var).clamp(-1.0, 1.0)
    }
}

/// Autocorrelation of an ensemble of trajectories started from
/// `init_map(feature)` for each feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTauCorr {
    pub acf: AcfResult,
    /// Time span actually integrated; shorter than the requested window when
    /// some member hit the blow-up guard.
    pub horizon: f64,
    pub truncated: bool,
}

/// ACF of all three axes of every member, averaged, over a window of
/// `window` time units at step `h`. Members that blow up are cut at their
/// last guarded state and the ensemble is evaluated on the common prefix.
pub fn ensemble_tau_corr(
    sys: &crate::dynsys::SystemParams,
    features: &[f64],
    init_map: &crate::dynsys::InitMap,
    window: f64,
    h: f64,
) -> Result<EnsembleTauCorr> {
    use crate::dynsys::{rk4_guarded, State3};
    if features.is_empty() {
        return Err(invalid("tau_corr ensemble needs at least one feature"));
    }
    sys.validate()?;
    let steps = (window / h).round() as usize;
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(3 * features.len());
    let mut shortest = steps;
    for &f in features {
        let mut s = init_map.apply(f);
        let mut states: Vec<State3> = vec![s];
        for k in 1..=steps {
            match rk4_guarded(sys, s, h, k as f64 * h, k) {
                Ok(next) => {
                    s = next;
                    states.push(s);
                }
                Err(Error::BlowUp { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        shortest = shortest.min(states.len() - 1);
        for axis in 0..3 {
            series.push(states.iter().map(|st| st.to_array()[axis]).collect());
        }
    }
    let acf = ensemble_acf(&series, h)?;
    Ok(EnsembleTauCorr {
        acf,
        horizon: shortest as f64 * h,
        truncated: shortest < steps,
    })
}

/// Second argument of [`mutual_info`].
#[derive(Debug, Clone, Copy)]
pub enum MiTarget<'a> {
    Labels(&'a [usize]),
    /// Row-major `n x d` matrix and its width.
    Matrix(&'a [f64], usize),
}

/// Binned mutual information in bits between the rows of `a` (`n x d_a`)
/// and `b`. Matrices wider than `pca_dims` are first projected onto their
/// leading principal components, then every dimension is cut into `bins`
/// equal-width bins and each distinct bin vector becomes one symbol.
pub fn mutual_info(a: &[f64], d_a: usize, b: MiTarget<'_>, bins: usize, pca_dims: usize) -> Result<f64> {
    let sa = symbolize(a, d_a, bins, pca_dims)?;
    let sb = match b {
        MiTarget::Labels(l) => relabel(l),
        MiTarget::Matrix(m, d) => symbolize(m, d, bins, pca_dims)?,
    };
    if sa.0.len() != sb.0.len() {
        return Err(Error::Shape(format!(
            "mutual_info rows differ: {} vs {}",
            sa.0.len(),
            sb.0.len()
        )));
    }
    Ok(symbol_mi(&sa, &sb))
}

/// Mean MI over `reps` random permutations of `b`'s rows: the estimator's
/// bias for independent variables with the same marginals.
pub fn shuffle_baseline(
    a: &[f64],
    d_a: usize,
    b: MiTarget<'_>,
    bins: usize,
    pca_dims: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let sa = symbolize(a, d_a, bins, pca_dims)?;
    let sb = match b {
        MiTarget::Labels(l) => relabel(l),
        MiTarget::Matrix(m, d) => symbolize(m, d, bins, pca_dims)?,
    };
    if sa.0.len() != sb.0.len() {
        return Err(Error::Shape("shuffle_baseline rows differ".into()));
    }
    let mut rng = Stream::new(seed);
    let mut total = 0.0;
    let mut perm = sb.0.clone();
    for _ in 0..reps.max(1) {
        rng.shuffle(&mut perm);
        total += symbol_mi(&sa, &(perm.clone(), sb.1));
    }
    Ok(total / reps.max(1) as f64)
}

/// Symbol per row and alphabet size.
type Symbols = (Vec<usize>, usize);

fn relabel(labels: &[usize]) -> Symbols {
    let mut map = HashMap::new();
    let syms = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (syms, map.len())
}

fn symbolize(data: &[f64], d: usize, bins: usize, pca_dims: usize) -> Result<Symbols> {
    if d == 0 || !data.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of width {d}",
            data.len()
        )));
    }
    if bins < 2 {
        return Err(invalid(format!("bins must be >= 2, got {bins}")));
    }
    let n = data.len() / d;
    if n < 100 {
        return Err(invalid(format!("mutual_info needs at least 100 rows, got {n}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mutual_info input".into()));
    }
    let (reduced, width) = if d > pca_dims {
        let pca = Pca::fit(data, n, d, pca_dims);
        if pca.total_variance > 0.0 {
            (pca.transform(data), pca.k)
        } else {
            (data.to_vec(), d)
        }
    } else {
        (data.to_vec(), d)
    };
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for row in reduced.chunks_exact(width) {
        for j in 0..width {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let mut map: HashMap<Vec<u16>, usize> = HashMap::new();
    let mut syms = Vec::with_capacity(n);
    let mut key = vec![0u16; width];
    for row in reduced.chunks_exact(width) {
        for j in 0..width {
            key[j] = if hi[j] > lo[j] {
                (((row[j] - lo[j]) / (hi[j] - lo[j]) * bins as f64) as usize).min(bins - 1) as u16
            } else {
                0
            };
        }
        let next = map.len();
        let s = *map.entry(key.clone()).or_insert(next);
        syms.push(s);
    }
    Ok((syms, map.len()))
}

/// Smoothed plug-in MI over the observed alphabets. Empty cells are summed
/// in closed form so the cost stays linear in the number of occupied cells.
fn symbol_mi(a: &Symbols, b: &Symbols) -> f64 {
    let (sa, ka) = (&a.0, a.1);
    let (sb, kb) = (&b.0, b.1);
    let n = sa.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ca = vec![0.0; ka];
    let mut cb = vec![0.0; kb];
    for (&i, &j) in sa.iter().zip(sb) {
        *joint.entry((i, j)).or_insert(0.0) += 1.0;
        ca[i] += 1.0;
        cb[j] += 1.0;
    }
    let e = SMOOTHING;
    let zj = n + (ka as f64) * (kb as f64) * e;
    let lpa: Vec<f64> = ca.iter().map(|c| ((c + e) / (n + ka as f64 * e)).log2()).collect();
    let lpb: Vec<f64> = cb.iter().map(|c| ((c + e) / (n + kb as f64 * e)).log2()).collect();
    let mut mi = 0.0;
    let mut occupied_marg = 0.0;
    for (&(i, j), &c) in &joint {
        let p = (c + e) / zj;
        mi += p * (p.log2() - lpa[i] - lpb[j]);
        occupied_marg += lpa[i] + lpb[j];
    }
    let empty = (ka as f64) * (kb as f64) - joint.len() as f64;
    if empty > 0.0 {
        let p0 = e / zj;
        let all_marg = kb as f64 * lpa.iter().sum::<f64>() + ka as f64 * lpb.iter().sum::<f64>();
        mi += p0 * (empty * p0.log2() - (all_marg - occupied_marg));
    }
    let cap = (ka.min(kb).max(1) as f64).log2();
    mi.clamp(0.0, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dense_and_sparse_mi_agree() {
        let sa: Vec<usize> = (0..300).map(|i| i % 7).collect();
        let sb: Vec<usize> = (0..300).map(|i| (i * i + 3) % 5).collect();
        let sparse = symbol_mi(&(sa.clone(), 7), &(sb.clone(), 5));
        let mut counts = vec![0.0; 35];
        for (i, j) in sa.iter().zip(&sb) {
            counts[i * 5 + j] += 1.0;
        }
        assert_abs_diff_eq!(sparse, smoothed_mi(&counts, 7, 5).max(0.0), epsilon = 1e-12);
    }

    #[test]
    fn persistent_series_stores_log_bins() {
        let mut s = Vec::new();
        for k in 0..8 {
            s.extend(std::iter::repeat_n(k as f64, 200));
        }
        let v = ais_series(&s, 8).unwrap();
        assert!(v > 2.95 && v <= 3.0, "{v}");
    }

    #[test]
    fn acf_of_alternating_series() {
        let s: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&s, 1.0).unwrap();
        assert_eq!(r.acf[0], 1.0);
        assert_abs_diff_eq!(r.acf[1], -1.0, epsilon = 1e-12);
        assert!(r.tau_corr < 1.0);
    }
}
