//! Statistics for sweep outputs: Pearson correlation, power-law scaling
//! near a critical point, a four-parameter sigmoid fit and the
//! Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-tailed Student-t p-value.
    pub p: f64,
    pub n: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Two-tailed p of a t statistic with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn normal_two_tailed(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} samples", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(invalid(format!("pearson needs n >= 3, got {n}")));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("pearson input is constant".into()));
    }
    let mut r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    // Affine relations land a few ulps short of +-1.
    if 1.0 - r.abs() < 1e-14 {
        r = r.signum();
    }
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_tailed(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(Correlation { r, p, n })
}

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-tailed p of the slope.
    pub p_value: f64,
    pub n: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let c = pearson(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared: c.r * c.r,
        p_value: c.p,
        n: c.n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Exponent: slope of `ln y` against `ln |lambda - lambda_c|`.
    pub beta: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub n: usize,
    /// Points removed because a logarithm argument was not positive.
    pub dropped: usize,
}

/// Fit `y = A |lambda - lambda_c|^beta` by log-log regression.
pub fn powerlaw_fit(lambda: &[f64], y: &[f64], lambda_c: f64) -> Result<PowerLawFit> {
    if lambda.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} samples", lambda.len(), y.len())));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (l, v) in lambda.iter().zip(y) {
        let dl = (l - lambda_c).abs();
        if dl > 0.0 && *v > 0.0 && dl.is_finite() && v.is_finite() {
            lx.push(dl.ln());
            ly.push(v.ln());
        }
    }
    let dropped = lambda.len() - lx.len();
    if lx.len() < 3 {
        return Err(invalid(format!(
            "power-law fit needs >= 3 usable points, {} left",
            lx.len()
        )));
    }
    let f = linear_fit(&lx, &ly)?;
    Ok(PowerLawFit {
        beta: f.slope,
        log_intercept: f.intercept,
        r_squared: f.r_squared,
        p_value: f.p_value,
        n: f.n,
        dropped,
    })
}

/// Per-side critical scaling fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalScaling {
    /// `lambda > lambda_c`.
    pub expansive: Option<PowerLawFit>,
    /// `lambda < lambda_c`.
    pub dissipative: Option<PowerLawFit>,
}

/// Power laws of `|metric - baseline|` on each side of `lambda_c`, where the
/// baseline is the metric at that side's grid point closest to `lambda_c`.
/// A side with fewer than three usable points gets `None`.
pub fn critical_scaling(lambda: &[f64], metric: &[f64], lambda_c: f64) -> Result<CriticalScaling> {
    if lambda.len() != metric.len() {
        return Err(Error::Shape(format!("{} vs {} samples", lambda.len(), metric.len())));
    }
    let side = |above: bool| -> Option<PowerLawFit> {
        let pts: Vec<(f64, f64)> = lambda
            .iter()
            .zip(metric)
            .filter(|(l, _)| if above { **l > lambda_c } else { **l < lambda_c })
            .map(|(l, m)| (*l, *m))
            .collect();
        let base = pts
            .iter()
            .min_by(|a, b| (a.0 - lambda_c).abs().total_cmp(&(b.0 - lambda_c).abs()))?
            .1;
        let (ls, ds): (Vec<f64>, Vec<f64>) = pts.iter().map(|(l, m)| (*l, (m - base).abs())).unzip();
        powerlaw_fit(&ls, &ds, lambda_c).ok()
    };
    Ok(CriticalScaling {
        expansive: side(true),
        dissipative: side(false),
    })
}

/// `y = b + L / (1 + exp(-k (x - x0)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub l: f64,
    pub k: f64,
    pub x0: f64,
    pub b: f64,
    pub r_squared: f64,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Residual sum of squares after each accepted step, starting at the initial guess.
    pub sse_history: Vec<f64>,
}

impl SigmoidFit {
    pub fn eval(&self, x: f64) -> f64 {
        sigmoid_model(&[self.l, self.k, self.x0, self.b], x)
    }
}

fn sigmoid_model(p: &[f64; 4], x: f64) -> f64 {
    p[3] + p[0] / (1.0 + (-p[1] * (x - p[2])).exp())
}

fn sse(p: &[f64; 4], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (b - sigmoid_model(p, *a)).powi(2)).sum()
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let piv = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in (c + 1)..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = ((r + 1)..4).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Gauss-Newton with backtracking line search. Initial guess: `b = min y`,
/// `L = range y`, `x0 = median x`, `k = +-4 / range x` with the sign of the
/// correlation.
pub fn sigmoid_fit(x: &[f64], y: &[f64]) -> Result<SigmoidFit> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} samples", x.len(), y.len())));
    }
    let n = x.len();
    if n < 5 {
        return Err(invalid(format!("sigmoid fit needs n >= 5, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sigmoid fit input".into()));
    }
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let sign = match pearson(x, y) {
        Ok(c) if c.r < 0.0 => -1.0,
        _ => 1.0,
    };
    let xr = (xmax - xmin).max(f64::MIN_POSITIVE);
    let mut p = [(ymax - ymin).max(1e-12), sign * 4.0 / xr, median, ymin];
    let mut cur = sse(&p, x, y);
    let mut history = vec![cur];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it + 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (xi, yi) in x.iter().zip(y) {
            let e = (-p[1] * (xi - p[2])).exp();
            let s = if e.is_finite() { 1.0 / (1.0 + e) } else { 0.0 };
            let ds = s * (1.0 - s);
            let g = [s, p[0] * ds * (xi - p[2]), -p[0] * ds * p[1], 1.0];
            let r = yi - sigmoid_model(&p, *xi);
            for a in 0..4 {
                jtr[a] += g[a] * r;
                for b in 0..4 {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        let trace: f64 = (0..4).map(|i| jtj[i][i]).sum();
        for (i, row) in jtj.iter_mut().enumerate() {
            row[i] += 1e-12 * trace.max(1e-300);
        }
        let Some(step) = solve4(jtj, jtr) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = [
                p[0] + t * step[0],
                p[1] + t * step[1],
                p[2] + t * step[2],
                p[3] + t * step[3],
            ];
            let s = sse(&trial, x, y);
            if s.is_finite() && s <= cur {
                accepted = Some((trial, s, t));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, s, t)) = accepted else {
            break;
        };
        let step_norm = t * step.iter().map(|v| v * v).sum::<f64>().sqrt();
        p = trial;
        cur = s;
        history.push(cur);
        if step_norm < 1e-10 || cur == 0.0 {
            converged = true;
            break;
        }
    }
    let my = mean(y);
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - cur / sst).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SigmoidFit {
        l: p[0],
        k: p[1],
        x0: p[2],
        b: p[3],
        r_squared,
        n,
        iterations,
        converged,
        sse_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: `R_a - n_a (n_a + 1) / 2`.
    pub u: f64,
    /// Two-tailed normal approximation with tie and continuity correction.
    pub p: f64,
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    let (na, nb) = (a.len(), b.len());
    if na < 3 || nb < 3 {
        return Err(invalid(format!(
            "Mann-Whitney needs >= 3 samples per group, got {na} and {nb}"
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Mann-Whitney input".into()));
    }
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|v| (*v, true))
        .chain(b.iter().map(|v| (*v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_a += all[i..=j].iter().filter(|e| e.1).count() as f64 * mid;
        i = j + 1;
    }
    let (fa, fb, fnn) = (na as f64, nb as f64, n as f64);
    let u = rank_a - fa * (fa + 1.0) / 2.0;
    let mu = fa * fb / 2.0;
    let var = fa * fb / 12.0 * ((fnn + 1.0) - tie_term / (fnn * (fnn - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        normal_two_tailed(z)
    };
    Ok(MannWhitney { u, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = pearson(&x, &x).unwrap();
        assert_eq!((c.r, c.p), (1.0, 0.0));
        assert_eq!(pearson(&x, &y).unwrap().r, -1.0);
        assert!(pearson(&x, &[1.0; 5]).is_err());
    }

    #[test]
    fn student_t_matches_tabulated_quantile() {
        // t_{0.975, 10} = 2.228139
        assert_abs_diff_eq!(student_t_two_tailed(2.228139, 10.0), 0.05, epsilon = 1e-6);
    }

    #[test]
    fn r_088_with_six_points_is_significant() {
        let r: f64 = 0.88;
        let t = r * (4.0 / (1.0 - r * r)).sqrt();
        assert!(student_t_two_tailed(t, 4.0) < 0.05);
    }

    #[test]
    fn exact_power_law() {
        let x: Vec<f64> = (1..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v.powf(0.42)).collect();
        let f = powerlaw_fit(&x, &y, 0.0).unwrap();
        assert_abs_diff_eq!(f.beta, 0.42, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!(f.dropped, 0);
    }

    #[test]
    fn exact_sigmoid_recovered() {
        let x: Vec<f64> = (0..30).map(|i| -3.0 + i as f64 * 0.2).collect();
        let truth = [5.0, 1.7, 0.4, -1.0];
        let y: Vec<f64> = x.iter().map(|v| sigmoid_model(&truth, *v)).collect();
        let f = sigmoid_fit(&x, &y).unwrap();
        for (got, want) in [f.l, f.k, f.x0, f.b].iter().zip(truth) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
        }
        assert!(f.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn linear_data_does_not_crash() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let f = sigmoid_fit(&x, &x).unwrap();
        assert!(f.r_squared > 0.9);
    }

    #[test]
    fn separated_samples() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (10..20).map(|i| i as f64).collect();
        let m = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(m.u, 0.0);
        assert!(m.p < 0.001);
        let same = mann_whitney_u(&a, &a).unwrap();
        assert_abs_diff_eq!(same.p, 1.0, epsilon = 1e-12);
    }
}
