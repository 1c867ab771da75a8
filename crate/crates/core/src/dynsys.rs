//! Continuous three-dimensional flows, their Jacobians, fixed-step RK4
//! integration and the feature-to-trajectory encoding map.
//!
//! Seven systems are provided: six classic chaotic attractors plus a
//! Duffing-type mixed oscillator whose damping parameter `delta` moves the
//! flow continuously from expansive (`delta < 0`) to dissipative
//! (`delta > 0`). Its phase-space divergence is exactly `-2 * delta`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Coordinates beyond this magnitude abort integration.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State3 {
    pub const ORIGIN: State3 = State3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        State3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        State3::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for State3 {
    type Output = State3;
    fn add(self, o: State3) -> State3 {
        State3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for State3 {
    type Output = State3;
    fn sub(self, o: State3) -> State3 {
        State3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for State3 {
    type Output = State3;
    fn mul(self, k: f64) -> State3 {
        State3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// An autonomous flow `ds/dt = f(s)` with an analytic Jacobian.
///
/// Implementations do no input validation; the free functions in this
/// module check finiteness around them.
pub trait VectorField {
    fn eval(&self, s: State3) -> State3;
    fn jacobian_at(&self, s: State3) -> Mat3;
}

/// The seven built-in systems with their parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemParams {
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
    },
    Rossler {
        a: f64,
        b: f64,
        c: f64,
    },
    Aizawa {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        epsilon: f64,
        zeta: f64,
    },
    NoseHoover {
        alpha: f64,
    },
    SprottC {
        a: f64,
    },
    Chua {
        alpha: f64,
        beta: f64,
        gamma: f64,
        m0: f64,
        m1: f64,
    },
    MixedOscillator {
        alpha: f64,
        beta: f64,
        delta: f64,
        gamma: f64,
        omega: f64,
    },
}

impl SystemParams {
    pub const fn lorenz() -> Self {
        SystemParams::Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 2.667,
        }
    }

    pub const fn rossler() -> Self {
        SystemParams::Rossler { a: 0.2, b: 0.2, c: 5.7 }
    }

    pub const fn aizawa() -> Self {
        SystemParams::Aizawa {
            alpha: 0.95,
            beta: 0.7,
            gamma: 0.6,
            delta: 3.5,
            epsilon: 0.25,
            zeta: 0.1,
        }
    }

    pub const fn nose_hoover() -> Self {
        SystemParams::NoseHoover { alpha: 1.0 }
    }

    pub const fn sprott_c() -> Self {
        SystemParams::SprottC { a: 3.0 }
    }

    pub const fn chua() -> Self {
        SystemParams::Chua {
            alpha: 15.6,
            beta: 28.58,
            gamma: 0.0,
            m0: -1.143,
            m1: -0.714,
        }
    }

    /// Mixed oscillator with the base parameters alpha=2, beta=0.1,
    /// gamma=0.1, omega=1 and the given damping.
    pub const fn mixed_oscillator(delta: f64) -> Self {
        SystemParams::MixedOscillator {
            alpha: 2.0,
            beta: 0.1,
            delta,
            gamma: 0.1,
            omega: 1.0,
        }
    }

    /// The six chaotic attractors in a fixed order.
    pub fn attractors() -> [SystemParams; 6] {
        [
            Self::lorenz(),
            Self::rossler(),
            Self::aizawa(),
            Self::nose_hoover(),
            Self::sprott_c(),
            Self::chua(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemParams::Lorenz { .. } => "lorenz",
            SystemParams::Rossler { .. } => "rossler",
            SystemParams::Aizawa { .. } => "aizawa",
            SystemParams::NoseHoover { .. } => "nose_hoover",
            SystemParams::SprottC { .. } => "sprott_c",
            SystemParams::Chua { .. } => "chua",
            SystemParams::MixedOscillator { .. } => "mixed_oscillator",
        }
    }

    /// Parse a system name as produced by [`SystemParams::name`], using
    /// default parameters. Mixed oscillators need an explicit delta.
    pub fn from_name(name: &str, delta: Option<f64>) -> Result<Self> {
        Ok(match name {
            "lorenz" => Self::lorenz(),
            "rossler" => Self::rossler(),
            "aizawa" => Self::aizawa(),
            "nose_hoover" => Self::nose_hoover(),
            "sprott_c" => Self::sprott_c(),
            "chua" => Self::chua(),
            "mixed_oscillator" => {
                Self::mixed_oscillator(delta.ok_or_else(|| invalid("mixed_oscillator requires delta"))?)
            }
            other => return Err(invalid(format!("unknown system '{other}'"))),
        })
    }

    pub fn delta(&self) -> Option<f64> {
        match self {
            SystemParams::MixedOscillator { delta, .. } => Some(*delta),
            _ => None,
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            SystemParams::Lorenz { sigma, rho, beta } => vec![sigma, rho, beta],
            SystemParams::Rossler { a, b, c } => vec![a, b, c],
            SystemParams::Aizawa {
                alpha,
                beta,
                gamma,
                delta,
                epsilon,
                zeta,
            } => vec![alpha, beta, gamma, delta, epsilon, zeta],
            SystemParams::NoseHoover { alpha } => vec![alpha],
            SystemParams::SprottC { a } => vec![a],
            SystemParams::Chua {
                alpha,
                beta,
                gamma,
                m0,
                m1,
            } => vec![alpha, beta, gamma, m0, m1],
            SystemParams::MixedOscillator {
                alpha,
                beta,
                delta,
                gamma,
                omega,
            } => vec![alpha, beta, delta, gamma, omega],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params().iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(invalid(format!("non-finite parameter in {self}")))
        }
    }
}

impl fmt::Display for SystemParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemParams::MixedOscillator { delta, .. } => {
                write!(f, "mixed_oscillator(delta={delta})")
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Chua diode nonlinearity.
fn chua_h(x: f64, m0: f64, m1: f64) -> f64 {
    m1 * x + 0.5 * (m0 - m1) * ((x + 1.0).abs() - (x - 1.0).abs())
}

/// Slope of the Chua diode; the kinks take the inner slope `m0`.
fn chua_h_prime(x: f64, m0: f64, m1: f64) -> f64 {
    if x.abs() <= 1.0 {
        m0
    } else {
        m1
    }
}

impl VectorField for SystemParams {
    fn eval(&self, s: State3) -> State3 {
        let State3 { x, y, z } = s;
        match *self {
            SystemParams::Lorenz { sigma, rho, beta } => {
                State3::new(sigma * (y - x), x * (rho - z) - y, x * y - beta * z)
            }
            SystemParams::Rossler { a, b, c } => State3::new(-y - z, x + a * y, b + z * (x - c)),
            SystemParams::Aizawa {
                alpha,
                beta,
                gamma,
                delta,
                epsilon,
                zeta,
            } => State3::new(
                (z - beta) * x - delta * y,
                delta * x + (z - beta) * y,
                gamma + alpha * z - z * z * z / 3.0 - (x * x + y * y) * (1.0 + epsilon * z) + zeta * z * x * x * x,
            ),
            SystemParams::NoseHoover { alpha } => State3::new(y, -x - y * z, y * y - alpha),
            SystemParams::SprottC { a } => State3::new(y * z, x - y, 1.0 - a * x * x),
            SystemParams::Chua {
                alpha,
                beta,
                gamma,
                m0,
                m1,
            } => State3::new(alpha * (y - x - chua_h(x, m0, m1)), x - y + z, -beta * y - gamma * z),
            SystemParams::MixedOscillator {
                alpha,
                beta,
                delta,
                gamma,
                omega,
            } => State3::new(
                y,
                -alpha * x - beta * x * x * x - delta * y + gamma * z,
                -omega * x - delta * z + gamma * x * y,
            ),
        }
    }

    fn jacobian_at(&self, s: State3) -> Mat3 {
        let State3 { x, y, z } = s;
        match *self {
            SystemParams::Lorenz { sigma, rho, beta } => [[-sigma, sigma, 0.0], [rho - z, -1.0, -x], [y, x, -beta]],
            SystemParams::Rossler { a, c, .. } => [[0.0, -1.0, -1.0], [1.0, a, 0.0], [z, 0.0, x - c]],
            SystemParams::Aizawa {
                alpha,
                beta,
                delta,
                epsilon,
                zeta,
                ..
            } => [
                [z - beta, -delta, x],
                [delta, z - beta, y],
                [
                    -2.0 * x * (1.0 + epsilon * z) + 3.0 * zeta * z * x * x,
                    -2.0 * y * (1.0 + epsilon * z),
                    alpha - z * z - epsilon * (x * x + y * y) + zeta * x * x * x,
                ],
            ],
            SystemParams::NoseHoover { .. } => [[0.0, 1.0, 0.0], [-1.0, -z, -y], [0.0, 2.0 * y, 0.0]],
            SystemParams::SprottC { a } => [[0.0, z, y], [1.0, -1.0, 0.0], [-2.0 * a * x, 0.0, 0.0]],
            SystemParams::Chua {
                alpha,
                beta,
                gamma,
                m0,
                m1,
            } => [
                [-alpha * (1.0 + chua_h_prime(x, m0, m1)), alpha, 0.0],
                [1.0, -1.0, 1.0],
                [0.0, -beta, -gamma],
            ],
            SystemParams::MixedOscillator {
                alpha,
                beta,
                delta,
                gamma,
                omega,
            } => [
                [0.0, 1.0, 0.0],
                [-alpha - 3.0 * beta * x * x, -delta, gamma],
                [-omega + gamma * y, gamma * x, -delta],
            ],
        }
    }
}

/// Linear flow `ds/dt = A s`; its Lyapunov exponents are the real parts of
/// the eigenvalues of `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFlow {
    pub a: Mat3,
}

impl LinearFlow {
    pub fn diagonal(d: [f64; 3]) -> Self {
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            a[i][i] = d[i];
        }
        LinearFlow { a }
    }
}

impl VectorField for LinearFlow {
    fn eval(&self, s: State3) -> State3 {
        let v = s.to_array();
        let mut out = [0.0; 3];
        for (i, row) in self.a.iter().enumerate() {
            out[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        State3::from_array(out)
    }

    fn jacobian_at(&self, _s: State3) -> Mat3 {
        self.a
    }
}

fn check_finite(s: State3, what: &str) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: {s:?}")))
    }
}

pub fn derivative<F: VectorField + ?Sized>(sys: &F, s: State3) -> Result<State3> {
    check_finite(s, "derivative input")?;
    Ok(sys.eval(s))
}

pub fn jacobian<F: VectorField + ?Sized>(sys: &F, s: State3) -> Result<Mat3> {
    check_finite(s, "jacobian input")?;
    Ok(sys.jacobian_at(s))
}

pub fn trace(m: &Mat3) -> f64 {
    m[0][0] + m[1][1] + m[2][2]
}

#[inline]
fn rk4_raw<F: VectorField + ?Sized>(sys: &F, s: State3, h: f64) -> State3 {
    let k1 = sys.eval(s) * h;
    let k2 = sys.eval(s + k1 * 0.5) * h;
    let k3 = sys.eval(s + k2 * 0.5) * h;
    let k4 = sys.eval(s + k3) * h;
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (1.0 / 6.0)
}

/// One RK4 step with the blow-up guard. `t` and `step` label the error.
pub(crate) fn rk4_guarded<F: VectorField + ?Sized>(sys: &F, s: State3, h: f64, t: f64, step: usize) -> Result<State3> {
    let next = rk4_raw(sys, s, h);
    if !next.is_finite() || next.max_abs() > BLOW_UP_LIMIT {
        return Err(Error::BlowUp {
            t,
            step,
            context: String::new(),
        });
    }
    Ok(next)
}

/// Classic fourth-order Runge-Kutta step.
pub fn rk4_step<F: VectorField + ?Sized>(sys: &F, s: State3, h: f64) -> Result<State3> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {h}")));
    }
    check_finite(s, "rk4 input")?;
    rk4_guarded(sys, s, h, h, 1)
}

/// Time-ordered states of one run of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State3>,
    pub system: SystemParams,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// One coordinate as a series (0 = x, 1 = y, 2 = z).
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.to_array()[axis]).collect()
    }

    pub fn last(&self) -> State3 {
        *self.states.last().expect("trajectory has at least one state")
    }
}

/// Integrate any vector field for `steps` fixed steps; returns all
/// `steps + 1` states including `s0`.
pub fn integrate_field<F: VectorField + ?Sized>(sys: &F, s0: State3, h: f64, steps: usize) -> Result<Vec<State3>> {
    if steps == 0 {
        return Err(invalid("integrate requires steps >= 1"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {h}")));
    }
    check_finite(s0, "initial state")?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s0);
    let mut s = s0;
    for k in 1..=steps {
        s = rk4_guarded(sys, s, h, k as f64 * h, k)?;
        states.push(s);
    }
    Ok(states)
}

pub fn integrate(sys: &SystemParams, s0: State3, h: f64, steps: usize) -> Result<Trajectory> {
    sys.validate()?;
    let states = integrate_field(sys, s0, h, steps).map_err(|e| with_context(e, &sys.to_string()))?;
    let times = (0..=steps).map(|k| k as f64 * h).collect();
    Ok(Trajectory {
        times,
        states,
        system: *sys,
    })
}

fn with_context(e: Error, ctx: &str) -> Error {
    match e {
        Error::BlowUp { t, step, context } => Error::BlowUp {
            t,
            step,
            context: format!("{context} [{ctx}]"),
        },
        other => other,
    }
}

/// Maps a scalar feature to an initial state by per-axis scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitMap {
    pub scale: [f64; 3],
}

impl Default for InitMap {
    fn default() -> Self {
        InitMap {
            scale: [1.0, 0.2, -1.0],
        }
    }
}

impl InitMap {
    pub fn apply(&self, feature: f64) -> State3 {
        State3::new(
            self.scale[0] * feature,
            self.scale[1] * feature,
            self.scale[2] * feature,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    pub t_max: f64,
    pub n_steps: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub init_map: InitMap,
    /// Sample at `linspace(0, t_max, N)` instead of `k * t_max / N`, k = 1..N.
    #[serde(default)]
    pub include_origin: bool,
}

fn default_h() -> f64 {
    0.01
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            t_max: 8.0,
            n_steps: 5,
            h: 0.01,
            init_map: InitMap::default(),
            include_origin: false,
        }
    }
}

impl EncodingConfig {
    pub fn new(t_max: f64, n_steps: usize) -> Self {
        EncodingConfig {
            t_max,
            n_steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(invalid(format!("t_max must be > 0, got {}", self.t_max)));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps must be >= 1"));
        }
        if !(self.h > 0.0) {
            return Err(invalid(format!("h must be > 0, got {}", self.h)));
        }
        if self.h > self.sample_spacing() * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "h = {} exceeds the sample spacing {}",
                self.h,
                self.sample_spacing()
            )));
        }
        Ok(())
    }

    /// Time between successive samples.
    pub fn sample_spacing(&self) -> f64 {
        if self.include_origin && self.n_steps > 1 {
            self.t_max / (self.n_steps - 1) as f64
        } else {
            self.t_max / self.n_steps as f64
        }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let dt = self.sample_spacing();
        if self.include_origin {
            (0..self.n_steps).map(|k| k as f64 * dt).collect()
        } else {
            (1..=self.n_steps).map(|k| k as f64 * dt).collect()
        }
    }

    /// RK4 sub-steps between samples and the (<= h) step they use.
    pub fn substeps(&self) -> (usize, f64) {
        let dt = self.sample_spacing();
        let n = ((dt / self.h) - 1e-9).ceil().max(1.0) as usize;
        (n, dt / n as f64)
    }
}

/// Encode a scalar feature as the `N` sampled states of a trajectory
/// started from `cfg.init_map(feature)`.
pub fn encode_feature(sys: &SystemParams, feature: f64, cfg: &EncodingConfig) -> Result<Vec<State3>> {
    if !feature.is_finite() {
        return Err(Error::NonFinite(format!("feature {feature}")));
    }
    cfg.validate()?;
    sys.validate()?;
    let (sub, h) = cfg.substeps();
    let ctx = || format!("feature {feature} with {sys}");
    let mut s = cfg.init_map.apply(feature);
    let mut out = Vec::with_capacity(cfg.n_steps);
    let mut step = 0usize;
    if cfg.include_origin {
        out.push(s);
    }
    while out.len() < cfg.n_steps {
        for _ in 0..sub {
            step += 1;
            s = rk4_guarded(sys, s, h, step as f64 * h, step).map_err(|e| with_context(e, &ctx()))?;
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lorenz_origin_is_fixed() {
        let d = derivative(&SystemParams::lorenz(), State3::ORIGIN).unwrap();
        assert_eq!(d, State3::ORIGIN);
    }

    #[test]
    fn mixed_oscillator_hand_evaluation() {
        let d = derivative(&SystemParams::mixed_oscillator(10.0), State3::new(1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(d.x, 0.0);
        assert_abs_diff_eq!(d.y, -2.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d.z, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn sprott_hand_evaluation() {
        let d = derivative(&SystemParams::sprott_c(), State3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(d, State3::new(1.0, 0.0, -2.0));
        let j = jacobian(&SystemParams::sprott_c(), State3::ORIGIN).unwrap();
        assert_eq!(j[1], [1.0, -1.0, 0.0]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let s = State3::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(
            derivative(&SystemParams::lorenz(), s),
            Err(Error::NonFinite(_))
        ));
        assert!(jacobian(&SystemParams::lorenz(), s).is_err());
    }

    #[test]
    fn lorenz_trace_is_constant() {
        let j = jacobian(&SystemParams::lorenz(), State3::new(3.0, -2.0, 17.0)).unwrap();
        assert_abs_diff_eq!(trace(&j), -13.667, epsilon = 1e-12);
    }

    #[test]
    fn chua_kink_uses_inner_slope() {
        let (m0, m1) = (-1.143, -0.714);
        assert_eq!(chua_h_prime(1.0, m0, m1), m0);
        assert_eq!(chua_h_prime(-1.0, m0, m1), m0);
        assert_eq!(chua_h_prime(1.5, m0, m1), m1);
        // h is continuous at the kink
        assert_abs_diff_eq!(chua_h(1.0, m0, m1), m0, epsilon = 1e-15);
    }

    #[test]
    fn rk4_exponential_growth() {
        let f = LinearFlow::diagonal([1.0, 0.0, 0.0]);
        let s = rk4_step(&f, State3::new(1.0, 0.0, 0.0), 0.1).unwrap();
        assert_abs_diff_eq!(s.x, 0.1f64.exp(), epsilon = 1e-6);
        assert_abs_diff_eq!(s.x, 1.105_170_833_333_333_3, epsilon = 1e-15);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let f = SystemParams::lorenz();
        assert!(rk4_step(&f, State3::ORIGIN, 0.0).is_err());
        assert!(rk4_step(&f, State3::ORIGIN, -0.1).is_err());
    }

    #[test]
    fn integrate_one_step() {
        let sys = SystemParams::lorenz();
        let s0 = State3::new(1.0, 1.0, 1.0);
        let traj = integrate(&sys, s0, 0.01, 1).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.states[0], s0);
        assert_eq!(traj.states[1], rk4_step(&sys, s0, 0.01).unwrap());
        assert!(integrate(&sys, s0, 0.01, 0).is_err());
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let f = LinearFlow::diagonal([50.0, 0.0, 0.0]);
        let err = integrate_field(&f, State3::new(1.0, 0.0, 0.0), 0.01, 10_000).unwrap_err();
        match err {
            Error::BlowUp { step, t, .. } => {
                assert!(step > 1);
                assert_abs_diff_eq!(t, step as f64 * 0.01, epsilon = 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encoding_sample_grid() {
        let cfg = EncodingConfig::new(8.0, 5);
        assert_abs_diff_eq!(cfg.sample_spacing(), 1.6, epsilon = 1e-15);
        let t = cfg.sample_times();
        assert_eq!(t.len(), 5);
        assert_abs_diff_eq!(t[4], 8.0, epsilon = 1e-12);
        assert_eq!(cfg.substeps().0, 160);
        let with0 = EncodingConfig {
            include_origin: true,
            ..cfg
        };
        assert_eq!(with0.sample_times()[0], 0.0);
        assert_abs_diff_eq!(with0.sample_times()[4], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn encoding_config_validation() {
        assert!(EncodingConfig::new(0.0, 5).validate().is_err());
        assert!(EncodingConfig::new(8.0, 0).validate().is_err());
        let coarse = EncodingConfig {
            h: 2.0,
            ..EncodingConfig::new(8.0, 5)
        };
        assert!(coarse.validate().is_err());
    }

    #[test]
    fn encode_zero_feature_on_lorenz() {
        let out = encode_feature(&SystemParams::lorenz(), 0.0, &EncodingConfig::default()).unwrap();
        assert_eq!(out, vec![State3::ORIGIN; 5]);
    }

    #[test]
    fn encode_matches_plain_integration() {
        let sys = SystemParams::mixed_oscillator(2.0);
        let cfg = EncodingConfig::default();
        let enc = encode_feature(&sys, 0.7, &cfg).unwrap();
        let traj = integrate(&sys, cfg.init_map.apply(0.7), 0.01, 800).unwrap();
        for (k, s) in enc.iter().enumerate() {
            assert_eq!(*s, traj.states[(k + 1) * 160]);
        }
    }

    #[test]
    fn encode_rejects_non_finite_feature() {
        assert!(encode_feature(&SystemParams::lorenz(), f64::INFINITY, &EncodingConfig::default()).is_err());
    }

    #[test]
    fn serde_round_trip_of_system() {
        let sys = SystemParams::mixed_oscillator(-1.5);
        let js = serde_json::to_string(&sys).unwrap();
        assert!(js.contains("\"system\":\"mixed_oscillator\""));
        let back: SystemParams = serde_json::from_str(&js).unwrap();
        assert_eq!(back, sys);
    }
}
