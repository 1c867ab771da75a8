//! Full Lyapunov spectrum of a three-dimensional flow by tangent-space
//! evolution with periodic QR re-orthonormalization.
//!
//! Per integration step the basis is propagated by the exponential of the
//! Jacobian at the current state, `Q <- exp(J h) Q`; every `qr_interval`
//! steps `Q = Q' R`, `ln R_ii` is accumulated and `Q <- Q'`. Because
//! `det exp(J h) = exp(tr(J) h)`, the sum of the exponents equals the
//! time-average of the divergence sampled at the same states.

use serde::{Deserialize, Serialize};

use crate::dynsys::{jacobian, rk4_guarded, Mat3, State3, VectorField};
use crate::error::{invalid, Error, Result};
use crate::linalg::{mat3_add, mat3_mul, mat3_norm_inf, mat3_scale, qr3, IDENTITY3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Exponents sorted descending, in inverse time units.
    pub lambdas: [f64; 3],
    pub lambda_max: f64,
    pub lambda_sum: f64,
    pub t_total: f64,
    pub n_qr: usize,
}

impl LyapunovSpectrum {
    fn from_sums(sums: [f64; 3], t_total: f64, n_qr: usize) -> Self {
        let mut lambdas = sums.map(|s| s / t_total);
        lambdas.sort_by(|a, b| b.total_cmp(a));
        LyapunovSpectrum {
            lambdas,
            lambda_max: lambdas[0],
            lambda_sum: lambdas.iter().sum(),
            t_total,
            n_qr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    #[serde(default = "default_h")]
    pub h: f64,
    pub t_total: f64,
    #[serde(default = "default_qr_interval")]
    pub qr_interval: usize,
    #[serde(default)]
    pub transient_steps: usize,
    #[serde(default = "default_tol")]
    pub matexp_tolerance: f64,
}

fn default_h() -> f64 {
    0.01
}
fn default_qr_interval() -> usize {
    5
}
fn default_tol() -> f64 {
    1e-10
}

impl LyapunovConfig {
    pub fn new(t_total: f64) -> Self {
        LyapunovConfig {
            h: 0.01,
            t_total,
            qr_interval: 5,
            transient_steps: 0,
            matexp_tolerance: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid(format!("h must be > 0, got {}", self.h)));
        }
        if self.qr_interval == 0 {
            return Err(invalid("qr_interval must be >= 1"));
        }
        if !(self.t_total >= 10.0 * self.h) {
            return Err(invalid(format!(
                "t_total = {} must be at least 10 h = {}",
                self.t_total,
                10.0 * self.h
            )));
        }
        if !(self.matexp_tolerance > 0.0) {
            return Err(invalid("matexp_tolerance must be > 0"));
        }
        Ok(())
    }

    /// Number of accumulated integration steps.
    pub fn steps(&self) -> usize {
        (self.t_total / self.h).round() as usize
    }
}

/// `e^M` by scaling the input to norm <= 0.5, summing the Taylor series
/// until the next term's norm falls below `tol`, then squaring back.
pub fn matrix_exponential(m: &Mat3, tol: f64) -> Result<Mat3> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input".into()));
    }
    let norm = mat3_norm_inf(m);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let a = mat3_scale(m, 0.5f64.powi(squarings as i32));
    let mut sum = IDENTITY3;
    let mut term = IDENTITY3;
    for k in 1..64 {
        term = mat3_scale(&mat3_mul(&term, &a), 1.0 / k as f64);
        sum = mat3_add(&sum, &term);
        if mat3_norm_inf(&term) < tol {
            break;
        }
    }
    for _ in 0..squarings {
        sum = mat3_mul(&sum, &sum);
    }
    Ok(sum)
}

/// Lyapunov spectrum of `sys` started from `s0`.
pub fn spectrum<F: VectorField + ?Sized>(sys: &F, s0: State3, cfg: &LyapunovConfig) -> Result<LyapunovSpectrum> {
    cfg.validate()?;
    if !s0.is_finite() {
        return Err(Error::NonFinite(format!("initial state {s0:?}")));
    }
    let h = cfg.h;
    let mut s = s0;
    let mut step = 0usize;
    for _ in 0..cfg.transient_steps {
        step += 1;
        s = rk4_guarded(sys, s, h, step as f64 * h, step)?;
    }

    let steps = cfg.steps();
    let mut q = IDENTITY3;
    let mut sums = [0.0f64; 3];
    let mut n_qr = 0usize;
    for k in 1..=steps {
        let j = jacobian(sys, s)?;
        step += 1;
        s = rk4_guarded(sys, s, h, step as f64 * h, step)?;
        let prop = matrix_exponential(&mat3_scale(&j, h), cfg.matexp_tolerance)?;
        q = mat3_mul(&prop, &q);
        if k % cfg.qr_interval == 0 || k == steps {
            let (q_new, r) = qr3(&q);
            for (i, acc) in sums.iter_mut().enumerate() {
                let rii = r[i][i];
                if !(rii > 0.0) || !rii.is_finite() {
                    return Err(Error::DegenerateBasis { index: i, value: rii });
                }
                *acc += rii.ln();
            }
            q = q_new;
            n_qr += 1;
        }
    }
    Ok(LyapunovSpectrum::from_sums(sums, steps as f64 * h, n_qr))
}

/// Spread of spectra across several initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub spectra: Vec<LyapunovSpectrum>,
    pub mean: [f64; 3],
    pub variance: [f64; 3],
    pub sum_mean: f64,
    pub sum_std: f64,
    /// `sum_std / max(|sum_mean|, 1)`.
    pub relative_spread: f64,
    /// Set when `relative_spread` exceeds 5 %.
    pub unstable: bool,
}

/// Repeat [`spectrum`] over several starts and summarise the variation.
pub fn stability_check<F: VectorField + ?Sized>(
    sys: &F,
    starts: &[State3],
    cfg: &LyapunovConfig,
) -> Result<StabilityReport> {
    if starts.len() < 2 {
        return Err(invalid(format!(
            "stability check needs at least 2 initial states, got {}",
            starts.len()
        )));
    }
    let spectra = starts
        .iter()
        .enumerate()
        .map(|(row, s0)| {
            spectrum(sys, *s0, cfg).map_err(|e| Error::Row {
                row,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = spectra.len() as f64;
    let mut mean = [0.0; 3];
    let mut variance = [0.0; 3];
    for i in 0..3 {
        mean[i] = spectra.iter().map(|s| s.lambdas[i]).sum::<f64>() / n;
        variance[i] = spectra.iter().map(|s| (s.lambdas[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
    }
    let sum_mean = spectra.iter().map(|s| s.lambda_sum).sum::<f64>() / n;
    let sum_std = (spectra.iter().map(|s| (s.lambda_sum - sum_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let relative_spread = sum_std / sum_mean.abs().max(1.0);
    Ok(StabilityReport {
        spectra,
        mean,
        variance,
        sum_mean,
        sum_std,
        relative_spread,
        unstable: relative_spread > 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{LinearFlow, SystemParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exponential(&[[0.0; 3]; 3], 1e-10).unwrap();
        assert_eq!(e, IDENTITY3);
    }

    #[test]
    fn exp_of_diagonal() {
        let m = [[1.5, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 0.25]];
        let e = matrix_exponential(&m, 1e-12).unwrap();
        assert_abs_diff_eq!(e[0][0], 1.5f64.exp(), epsilon = 1e-10);
        assert_abs_diff_eq!(e[1][1], (-2.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[2][2], 0.25f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[0][1], 0.0);
    }

    #[test]
    fn exp_of_generator_is_rotation() {
        let th = std::f64::consts::FRAC_PI_2;
        let m = [[0.0, th, 0.0], [-th, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let e = matrix_exponential(&m, 1e-10).unwrap();
        let want = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((e[i][j] - want[i][j]).abs() < 1e-10, "{i}{j}: {}", e[i][j]);
            }
        }
    }

    #[test]
    fn exp_rejects_nan() {
        let mut m = [[0.0; 3]; 3];
        m[1][2] = f64::NAN;
        assert!(matrix_exponential(&m, 1e-10).is_err());
    }

    #[test]
    fn linear_flow_recovers_eigenvalues() {
        let f = LinearFlow::diagonal([-2.0, -1.0, -3.0]);
        let sp = spectrum(&f, State3::new(1.0, 1.0, 1.0), &LyapunovConfig::new(20.0)).unwrap();
        assert_abs_diff_eq!(sp.lambdas[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.lambdas[1], -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.lambdas[2], -3.0, epsilon = 1e-9);
        assert_eq!(sp.lambda_max, sp.lambdas[0]);
        assert_eq!(sp.n_qr, 400);
    }

    #[test]
    fn config_validation() {
        assert!(LyapunovConfig::new(0.05).validate().is_err());
        let mut c = LyapunovConfig::new(10.0);
        c.qr_interval = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn non_multiple_interval_still_closes_last_block() {
        let mut c = LyapunovConfig::new(1.03);
        c.qr_interval = 5;
        let sp = spectrum(&SystemParams::lorenz(), State3::new(1.0, 1.0, 1.0), &c).unwrap();
        assert_eq!(sp.n_qr, 21);
        assert_abs_diff_eq!(sp.lambda_sum, -13.667, epsilon = 1e-6);
    }

    #[test]
    fn stability_needs_two_samples() {
        let err = stability_check(
            &SystemParams::lorenz(),
            &[State3::new(1.0, 1.0, 1.0)],
            &LyapunovConfig::new(1.0),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
