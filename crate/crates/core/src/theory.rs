//! Mean-field relations between correlated input and LIF firing: an
//! Ornstein-Uhlenbeck input model, the decay/time-constant conversion, the
//! low-pass effective variance, a Siegert-type rate integral and the
//! Gaussian channel-capacity bound.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub mu: f64,
    pub sigma2: f64,
    pub tau_corr: f64,
    pub h: f64,
}

impl OuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0) || !(self.tau_corr > 0.0) || !(self.h > 0.0) {
            return Err(invalid(format!("OU parameters out of range: {self:?}")));
        }
        if self.h >= self.tau_corr / 2.0 {
            return Err(invalid(format!(
                "step h = {} must be below tau_corr / 2 = {}",
                self.h,
                self.tau_corr / 2.0
            )));
        }
        Ok(())
    }
}

/// Euler-Maruyama path of `dx = (mu - x)/tau dt + sqrt(2 sigma2 / tau) dW`,
/// starting at `x0`. Returns `steps + 1` values including the start.
pub fn ou_simulate(p: &OuParams, x0: f64, steps: usize, rng: &mut Stream) -> Result<Vec<f64>> {
    p.validate()?;
    if steps == 0 {
        return Err(invalid("steps must be >= 1"));
    }
    let a = p.h / p.tau_corr;
    let noise = (2.0 * p.sigma2 * a).sqrt();
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..steps {
        x += (p.mu - x) * a;
        if noise > 0.0 {
            x += noise * rng.normal();
        }
        out.push(x);
    }
    Ok(out)
}

/// `tau_m = -dt / ln(beta)`.
pub fn tau_m_from_beta(beta: f64, dt: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) || !(dt > 0.0) {
        return Err(invalid(format!("need beta in (0, 1) and dt > 0, got {beta}, {dt}")));
    }
    Ok(-dt / beta.ln())
}

pub fn beta_from_tau_m(tau_m: f64, dt: f64) -> Result<f64> {
    if !(tau_m > 0.0) || !(dt > 0.0) {
        return Err(invalid(format!("need tau_m > 0 and dt > 0, got {tau_m}, {dt}")));
    }
    Ok((-dt / tau_m).exp())
}

/// Low-pass suppression `(1 + tau_corr / tau_m)^-1`.
pub fn variance_factor(ratio: f64) -> f64 {
    1.0 / (1.0 + ratio)
}

/// `(tau_m sigma_I2 / 2) (1 + tau_corr / tau_m)^-1`, proportionality
/// constant 1.
pub fn effective_variance(sigma_i2: f64, tau_m: f64, tau_corr: f64) -> Result<f64> {
    if !(sigma_i2 >= 0.0) || !(tau_m > 0.0) || !(tau_corr >= 0.0) {
        return Err(invalid(format!(
            "effective variance needs sigma2 >= 0, tau_m > 0, tau_corr >= 0; got {sigma_i2}, {tau_m}, {tau_corr}"
        )));
    }
    Ok(tau_m * sigma_i2 / 2.0 * variance_factor(tau_corr / tau_m))
}

/// `e^{x^2} erfc(x)`, finite for all x where the result is representable.
pub fn erfcx(x: f64) -> f64 {
    if x < 26.0 {
        if x < -26.6 {
            return f64::INFINITY;
        }
        (x * x).exp() * erfc(x)
    } else {
        // Asymptotic series; the truncation error at x >= 26 is below 1e-13.
        let x2 = x * x;
        let inv = 1.0 / (2.0 * x2);
        (1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv) / (x * std::f64::consts::PI.sqrt())
    }
}

/// Inputs of the rate integral. `sigma_eff` follows the convention in which
/// the free membrane potential has stationary variance `sigma_eff^2 / 2`,
/// i.e. `tau_m dV = (mu_v - V) dt + sigma_eff sqrt(tau_m) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInputs {
    pub mu_v: f64,
    pub sigma_eff: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub tau_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    /// Spikes per time unit.
    pub rate: f64,
    /// The integrand overflowed (deep subthreshold); the rate is reported as 0.
    pub silent: bool,
}

/// `nu = [tau_m sqrt(pi) int_{(v_reset-mu)/sigma}^{(v_th-mu)/sigma} e^{y^2}(1+erf y) dy]^-1`
/// by adaptive Gauss-Legendre quadrature to relative tolerance `tol`.
pub fn siegert_rate(r: &RateInputs, tol: f64) -> Result<Rate> {
    if !(r.sigma_eff > 0.0) || !(r.v_th > r.v_reset) || !(r.tau_m > 0.0) {
        return Err(invalid(format!("rate inputs out of range: {r:?}")));
    }
    let lo = (r.v_reset - r.mu_v) / r.sigma_eff;
    let hi = (r.v_th - r.mu_v) / r.sigma_eff;
    // e^{y^2}(1 + erf y) = erfcx(-y).
    let integrand = |y: f64| erfcx(-y);
    if !integrand(hi).is_finite() {
        return Ok(Rate {
            rate: 0.0,
            silent: true,
        });
    }
    let integral = adaptive_gauss_legendre(&integrand, lo, hi, tol);
    let denom = r.tau_m * std::f64::consts::PI.sqrt() * integral;
    if !denom.is_finite() || denom <= 0.0 {
        return Ok(Rate {
            rate: 0.0,
            silent: true,
        });
    }
    Ok(Rate {
        rate: 1.0 / denom,
        silent: false,
    })
}

const GL_ORDER: usize = 10;

/// Nodes and weights on [-1, 1] by Newton iteration on the Legendre polynomial.
fn gauss_legendre_rule() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = [0.0; GL_ORDER];
        let mut w = [0.0; GL_ORDER];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (x, w) = gauss_legendre_rule();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    x.iter().zip(w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}

/// Panel bisection until each panel agrees with its two halves to `tol`
/// relative to the running total.
pub fn adaptive_gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let left = gl_panel(f, a, m);
        let right = gl_panel(f, m, b);
        let split = left + right;
        if depth == 0 || (split - whole).abs() <= tol * split.abs().max(f64::MIN_POSITIVE) {
            return split;
        }
        recurse(f, a, m, left, tol, depth - 1) + recurse(f, m, b, right, tol, depth - 1)
    }
    let whole = gl_panel(f, a, b);
    recurse(f, a, b, whole, tol, 40)
}

/// Monte-Carlo LIF first-passage rate for white-noise drive in the same
/// convention as [`siegert_rate`]; Euler-Maruyama with step `dt`.
pub fn simulate_lif_rate(r: &RateInputs, dt: f64, duration: f64, rng: &mut Stream) -> Result<f64> {
    if !(dt > 0.0) || !(duration > dt) {
        return Err(invalid("need 0 < dt < duration"));
    }
    let steps = (duration / dt).round() as usize;
    let a = dt / r.tau_m;
    let noise = r.sigma_eff * a.sqrt();
    let mut v = r.v_reset;
    let mut spikes = 0usize;
    for _ in 0..steps {
        v += (r.mu_v - v) * a + noise * rng.normal();
        if v >= r.v_th {
            spikes += 1;
            v = r.v_reset;
        }
    }
    Ok(spikes as f64 / (steps as f64 * dt))
}

/// `1/2 log2(1 + 1/cv^2)` bits; infinite at `cv = 0`.
pub fn capacity_bound(cv: f64) -> Result<f64> {
    if !(cv >= 0.0) {
        return Err(invalid(format!("cv must be >= 0, got {cv}")));
    }
    if cv == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(0.5 * (1.0 + 1.0 / (cv * cv)).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tau_m_hand_example() {
        assert_abs_diff_eq!(tau_m_from_beta(0.95, 1.6).unwrap(), 31.19, epsilon = 0.01);
        assert_abs_diff_eq!(tau_m_from_beta((-1f64).exp(), 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert!(tau_m_from_beta(1.0, 1.0).is_err());
    }

    #[test]
    fn variance_limits() {
        assert_eq!(effective_variance(2.0, 3.0, 0.0).unwrap(), 3.0);
        assert_eq!(effective_variance(2.0, 3.0, 3.0).unwrap(), 1.5);
    }

    #[test]
    fn capacity_values() {
        assert_abs_diff_eq!(capacity_bound(1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(capacity_bound((1.0f64 / 3.0).sqrt()).unwrap(), 1.0, epsilon = 1e-12);
        assert!(capacity_bound(0.0).unwrap().is_infinite());
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let v = adaptive_gauss_legendre(&|x: f64| x.powi(7) - 3.0 * x * x, -1.0, 2.0, 1e-12);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0);
        assert_abs_diff_eq!(v, exact, epsilon = 1e-11);
    }

    #[test]
    fn erfcx_is_continuous_at_the_switch() {
        let below = (26f64.next_down().powi(2)).exp() * erfc(26f64.next_down());
        assert!((erfcx(26.0) - below).abs() / below < 1e-10);
        assert_abs_diff_eq!(erfcx(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn silent_deep_below_threshold() {
        let r = RateInputs {
            mu_v: -50.0,
            sigma_eff: 0.1,
            v_th: 1.0,
            v_reset: 0.0,
            tau_m: 10.0,
        };
        let rate = siegert_rate(&r, 1e-8).unwrap();
        assert!(rate.silent && rate.rate == 0.0);
    }

    #[test]
    fn ou_noise_free_relaxes_to_mean() {
        let p = OuParams {
            mu: 2.0,
            sigma2: 0.0,
            tau_corr: 1.0,
            h: 0.01,
        };
        let xs = ou_simulate(&p, 0.0, 100, &mut Stream::new(0)).unwrap();
        let want = 2.0 * (1.0 - 0.99f64.powi(100));
        assert_abs_diff_eq!(xs[100], want, epsilon = 1e-12);
    }
}
