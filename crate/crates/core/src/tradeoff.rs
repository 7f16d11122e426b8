//! Transmission-interval/delay tradeoff from scalar Riccati comparison
//! curves.
//!
//! Two scalar Riccati equations `phi_b' = -2 L_b phi_b - gamma_b ((1 +
//! rho_b) phi_b^2 + 1)` (phases b = 0 waiting, b = 1 in flight) bound the
//! closed loop between network events. The largest transmission interval
//! keeps `gamma0 phi0(tau)` above the constant `(1 + rho1) lambda^2 gamma1
//! phi1(0)`; the largest delay keeps `gamma1 phi1` above `(1 + rho0) gamma0
//! phi0` pointwise. Both equations have constant coefficients, so the
//! module solves them in closed form, cross-checks a fixed-step RK4 run
//! against that solution, and finds the thresholds by bisection.

use crate::error::CoreError;
use serde::{Deserialize, Serialize};

/// Constants of the two comparison curves and the protocol contraction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffParams {
    /// Lipschitz-type flow constant of the waiting phase.
    pub l0: f64,
    /// Lipschitz-type flow constant of the in-flight phase.
    pub l1: f64,
    /// Gain constant of the waiting phase, > 0.
    pub gamma0: f64,
    /// Gain constant of the in-flight phase, > 0.
    pub gamma1: f64,
    /// Protocol contraction factor in [0, 1).
    pub lambda: f64,
    /// Margin parameter of the waiting-phase curve, >= 0.
    pub rho0: f64,
    /// Margin parameter of the in-flight-phase curve, >= 0.
    pub rho1: f64,
    /// Initial value phi0(0) > 0.
    pub phi00: f64,
    /// Initial value phi1(0) > 0.
    pub phi10: f64,
}

impl TradeoffParams {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.gamma0 > 0.0 && self.gamma1 > 0.0) {
            return Err(CoreError::InvalidArguments(
                "gamma0 and gamma1 must be positive".into(),
            ));
        }
        if !(self.phi00 > 0.0 && self.phi10 > 0.0) {
            return Err(CoreError::InvalidArguments(
                "phi00 and phi10 must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda < 1.0) {
            return Err(CoreError::InvalidArguments("lambda must lie in [0, 1)".into()));
        }
        if self.l0 < 0.0 || self.l1 < 0.0 || self.rho0 < 0.0 || self.rho1 < 0.0 {
            return Err(CoreError::InvalidArguments(
                "l and rho constants must be nonnegative".into(),
            ));
        }
        let all = [
            self.l0, self.l1, self.gamma0, self.gamma1, self.lambda, self.rho0, self.rho1,
            self.phi00, self.phi10,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArguments("parameters must be finite".into()));
        }
        Ok(())
    }

    /// Soft admissibility checks. The certified construction wants each
    /// margin inside `(0, 1/(lambda phi_b0)^2 - 1)` and each initial value
    /// inside `(1, 1/lambda)`; values outside still define valid curves, so
    /// violations are reported rather than rejected.
    pub fn admissibility_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, rho, phi0) in [("rho0", self.rho0, self.phi00), ("rho1", self.rho1, self.phi10)]
        {
            if rho == 0.0 {
                out.push(format!("{name} = 0 leaves no strict margin"));
            } else if self.lambda > 0.0 {
                let cap = 1.0 / (self.lambda * self.lambda * phi0 * phi0) - 1.0;
                if cap <= 0.0 || rho >= cap {
                    out.push(format!(
                        "{name} = {rho} outside the certified margin interval (0, {cap})"
                    ));
                }
            }
        }
        for (name, phi0) in [("phi00", self.phi00), ("phi10", self.phi10)] {
            let hi_ok = self.lambda == 0.0 || phi0 < 1.0 / self.lambda;
            if phi0 <= 1.0 || !hi_ok {
                out.push(format!(
                    "{name} = {phi0} outside the certified initial-value interval (1, 1/lambda)"
                ));
            }
        }
        out
    }
}

/// Sampled comparison curves, with the cross-check residual.
///
/// `phi_solve` fills only the requested phase; the pair returned by
/// `compute_mati_mad` shares one grid. `max_discrepancy` is the largest
/// pointwise gap between the fixed-step RK4 run and the closed form over
/// the emitted grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiCurve {
    pub tau: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    /// True when the curve stopped early because a phase left the finite
    /// range before the requested horizon.
    pub truncated: bool,
    pub max_discrepancy: f64,
}

impl PhiCurve {
    pub fn phase(&self, b: u8) -> &[f64] {
        if b == 0 {
            &self.phi0
        } else {
            &self.phi1
        }
    }
}

/// One sampled point of the interval and delay conditions along a curve
/// pair, for plotting and CSV export.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConditionRow {
    pub tau: f64,
    pub phi0: f64,
    pub phi1: f64,
    /// Interval condition holds where `lhs_interval >= rhs_interval`.
    pub lhs_interval: f64,
    pub rhs_interval: f64,
    /// Delay condition holds where `lhs_delay >= rhs_delay`.
    pub lhs_delay: f64,
    pub rhs_delay: f64,
}

/// Tabulates both admissibility conditions along a sampled curve pair.
///
/// The interval condition compares `gamma0 phi0(tau)` against the constant
/// `(1 + rho1) lambda^2 gamma1 phi1(0)`; the delay condition compares
/// `gamma1 phi1(tau)` against `(1 + rho0) gamma0 phi0(tau)` pointwise.
pub fn condition_rows(params: &TradeoffParams, curve: &PhiCurve) -> Vec<ConditionRow> {
    let rhs_interval =
        (1.0 + params.rho1) * params.lambda * params.lambda * params.gamma1 * params.phi10;
    curve
        .tau
        .iter()
        .zip(curve.phi0.iter().zip(curve.phi1.iter()))
        .map(|(&tau, (&phi0, &phi1))| ConditionRow {
            tau,
            phi0,
            phi1,
            lhs_interval: params.gamma0 * phi0,
            rhs_interval,
            lhs_delay: params.gamma1 * phi1,
            rhs_delay: (1.0 + params.rho0) * params.gamma0 * phi0,
        })
        .collect()
}

/// Result of the interval/delay computation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TradeoffResult {
    /// Largest admissible transmission interval (seconds).
    pub h_mati: f64,
    /// Largest admissible in-flight delay (seconds), at most `h_mati`.
    pub h_mad: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<PhiCurve>,
    pub diagnostics: Vec<String>,
}

/// One constant-coefficient scalar Riccati equation
/// `phi' = -(a phi^2 + 2 b phi + c)` with `a = gamma (1 + rho)`, `b = L`,
/// `c = gamma`.
#[derive(Clone, Copy, Debug)]
struct Riccati {
    a: f64,
    b: f64,
    c: f64,
    phi0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Damping {
    Under,
    Critical,
    Over,
}

impl Riccati {
    fn from_phase(p: &TradeoffParams, phase: u8) -> Self {
        let (l, gamma, rho, phi0) = if phase == 0 {
            (p.l0, p.gamma0, p.rho0, p.phi00)
        } else {
            (p.l1, p.gamma1, p.rho1, p.phi10)
        };
        Riccati {
            a: gamma * (1.0 + rho),
            b: l,
            c: gamma,
            phi0,
        }
    }

    fn discriminant(&self) -> f64 {
        self.b * self.b - self.a * self.c
    }

    fn damping(&self) -> Damping {
        let disc = self.discriminant();
        if disc.abs() < 1e-12 * (self.b * self.b).max(self.a * self.c) {
            Damping::Critical
        } else if disc < 0.0 {
            Damping::Under
        } else {
            Damping::Over
        }
    }

    fn rhs(&self, phi: f64) -> f64 {
        -(self.a * phi * phi + 2.0 * self.b * phi + self.c)
    }

    /// Closed-form value at `tau`. Past the finite-escape time of the
    /// underdamped branch the value is non-finite.
    fn eval(&self, tau: f64) -> f64 {
        match self.damping() {
            Damping::Under => {
                let omega = (self.a * self.c - self.b * self.b).sqrt();
                let theta0 = ((self.a * self.phi0 + self.b) / omega).atan();
                let arg = theta0 - omega * tau;
                if arg <= -std::f64::consts::FRAC_PI_2 {
                    f64::NEG_INFINITY
                } else {
                    (omega * arg.tan() - self.b) / self.a
                }
            }
            Damping::Over => {
                let root = self.discriminant().sqrt();
                let r_plus = (-self.b + root) / self.a;
                let r_minus = (-self.b - root) / self.a;
                let k = (self.phi0 - r_plus) / (self.phi0 - r_minus);
                let decay = k * (-2.0 * root * tau).exp();
                (r_plus - r_minus * decay) / (1.0 - decay)
            }
            Damping::Critical => {
                let r = -self.b / self.a;
                r + (self.phi0 - r) / (1.0 + self.a * (self.phi0 - r) * tau)
            }
        }
    }

    /// Time at which the curve reaches zero. Always finite and positive:
    /// the slope is at most `-c < 0` wherever the curve is nonnegative.
    fn zero_crossing(&self) -> f64 {
        match self.damping() {
            Damping::Under => {
                let omega = (self.a * self.c - self.b * self.b).sqrt();
                let theta0 = ((self.a * self.phi0 + self.b) / omega).atan();
                (theta0 - (self.b / omega).atan()) / omega
            }
            Damping::Over => {
                let root = self.discriminant().sqrt();
                let r_plus = (-self.b + root) / self.a;
                let r_minus = (-self.b - root) / self.a;
                let k = (self.phi0 - r_plus) / (self.phi0 - r_minus);
                (k * r_minus / r_plus).ln() / (2.0 * root)
            }
            Damping::Critical => {
                let r = -self.b / self.a;
                -self.phi0 / (r * self.a * (self.phi0 - r))
            }
        }
    }
}

/// Closed-form value of one comparison curve at elapsed time `tau`.
///
/// Negative values (including negative infinity past the underdamped
/// escape time) mean `tau` lies beyond the curve's validity window;
/// callers decide whether that is an error.
pub fn phi_value(params: &TradeoffParams, phase: u8, tau: f64) -> Result<f64, CoreError> {
    params.validate()?;
    if phase > 1 {
        return Err(CoreError::InvalidArguments(format!(
            "phase must be 0 or 1, got {phase}"
        )));
    }
    if !(tau >= 0.0) {
        return Err(CoreError::InvalidArguments(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    Ok(Riccati::from_phase(params, phase).eval(tau))
}

const CURVE_CAP: f64 = 1e12;

/// Solves one comparison curve on a fixed grid, in closed form and by RK4.
///
/// Returns the grid, the closed-form samples for the requested phase, and
/// the largest gap between the two solutions. A phase that leaves the
/// finite range before `tau_max` (the curve escapes after crossing zero)
/// truncates the grid at the last finite point.
pub fn phi_solve(
    params: &TradeoffParams,
    phase: u8,
    tau_max: f64,
    step: f64,
) -> Result<PhiCurve, CoreError> {
    params.validate()?;
    if phase > 1 {
        return Err(CoreError::InvalidArguments(format!("phase must be 0 or 1, got {phase}")));
    }
    if !(tau_max > 0.0 && step > 0.0) {
        return Err(CoreError::InvalidArguments("tau_max and step must be positive".into()));
    }
    let eq = Riccati::from_phase(params, phase);
    let mut tau_grid = vec![0.0];
    let mut values = vec![eq.phi0];
    let mut numeric = eq.phi0;
    let mut max_disc = 0.0_f64;
    let mut truncated = false;
    let mut t = 0.0_f64;
    while t < tau_max {
        let h = if tau_max - t <= step { tau_max - t } else { step };
        if h <= step * 1e-14 {
            break;
        }
        let k1 = eq.rhs(numeric);
        let k2 = eq.rhs(numeric + 0.5 * h * k1);
        let k3 = eq.rhs(numeric + 0.5 * h * k2);
        let k4 = eq.rhs(numeric + h * k3);
        numeric += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = if tau_max - t <= step { tau_max } else { t + h };
        let exact = eq.eval(t);
        if !exact.is_finite() || !numeric.is_finite() || exact.abs() > CURVE_CAP {
            truncated = true;
            break;
        }
        max_disc = max_disc.max((numeric - exact).abs());
        tau_grid.push(t);
        values.push(exact);
    }
    let (phi0, phi1) = if phase == 0 {
        (values, Vec::new())
    } else {
        (Vec::new(), values)
    };
    Ok(PhiCurve {
        tau: tau_grid,
        phi0,
        phi1,
        truncated,
        max_discrepancy: max_disc,
    })
}

/// Bisects a predicate that is true at `lo` and false at `hi`, returning
/// the last true point to relative tolerance `rel`.
fn bisect_boundary(mut lo: f64, mut hi: f64, rel: f64, holds: impl Fn(f64) -> bool) -> f64 {
    let tol = rel * hi.max(1e-300);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

const DELAY_SCAN_STEPS: usize = 2048;
const CURVE_POINTS: usize = 512;

/// Computes the largest transmission interval and delay.
///
/// The interval condition compares the decreasing curve `gamma0 phi0`
/// against a constant, so it holds on `[0, tau]` exactly when it holds at
/// `tau`; the delay condition compares two curves pointwise and is scanned
/// for its first violation. Either condition failing at zero yields an
/// exact zero with a diagnostic naming the condition. The returned curves
/// cover `[0, h_mati]` (or the waiting curve's zero crossing when the
/// interval collapses).
pub fn compute_mati_mad(params: &TradeoffParams) -> Result<TradeoffResult, CoreError> {
    params.validate()?;
    let mut diagnostics = params.admissibility_warnings();
    let r0 = Riccati::from_phase(params, 0);
    let r1 = Riccati::from_phase(params, 1);

    let rhs_interval = (1.0 + params.rho1) * params.lambda * params.lambda * params.gamma1
        * params.phi10;
    let interval_holds = |tau: f64| -> bool {
        let phi = r0.eval(tau);
        phi.is_finite() && phi > 0.0 && params.gamma0 * phi >= rhs_interval
    };
    let cross0 = r0.zero_crossing();
    let h_mati = if params.gamma0 * params.phi00 < rhs_interval {
        diagnostics.push(format!(
            "interval condition fails at tau = 0: gamma0*phi0(0) = {} < {}",
            params.gamma0 * params.phi00,
            rhs_interval
        ));
        0.0
    } else {
        bisect_boundary(0.0, cross0, 1e-9, interval_holds)
    };

    let delay_gap = |tau: f64| -> f64 {
        params.gamma1 * r1.eval(tau) - (1.0 + params.rho0) * params.gamma0 * r0.eval(tau)
    };
    let h_mad = if delay_gap(0.0) < 0.0 {
        diagnostics.push(format!(
            "delay condition fails at tau = 0: gamma1*phi1(0) = {} < {}",
            params.gamma1 * params.phi10,
            (1.0 + params.rho0) * params.gamma0 * params.phi00
        ));
        0.0
    } else if h_mati == 0.0 {
        0.0
    } else {
        // First scan for a sign change, then refine inside that cell; no
        // change anywhere means the delay bound coincides with the interval.
        let mut first_bad = None;
        for k in 1..=DELAY_SCAN_STEPS {
            let s = h_mati * k as f64 / DELAY_SCAN_STEPS as f64;
            if delay_gap(s) < 0.0 {
                first_bad = Some(k);
                break;
            }
        }
        match first_bad {
            None => h_mati,
            Some(k) => {
                let lo = h_mati * (k - 1) as f64 / DELAY_SCAN_STEPS as f64;
                let hi = h_mati * k as f64 / DELAY_SCAN_STEPS as f64;
                bisect_boundary(lo, hi, 1e-9, |s| delay_gap(s) >= 0.0)
            }
        }
    };

    let span = if h_mati > 0.0 { h_mati } else { cross0 };
    let step = span / CURVE_POINTS as f64;
    let c0 = phi_solve(params, 0, span, step)?;
    let c1 = phi_solve(params, 1, span, step)?;
    let n = c0.tau.len().min(c1.tau.len());
    let curves = PhiCurve {
        tau: c0.tau[..n].to_vec(),
        phi0: c0.phi0[..n].to_vec(),
        phi1: c1.phi1[..n].to_vec(),
        truncated: c0.truncated || c1.truncated,
        max_discrepancy: c0.max_discrepancy.max(c1.max_discrepancy),
    };
    Ok(TradeoffResult {
        h_mati,
        h_mad,
        curves: Some(curves),
        diagnostics,
    })
}

/// A class-K comparison function with a computable inverse.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KFunction {
    Linear { slope: f64 },
    Quadratic { coeff: f64 },
    Power { coeff: f64, exponent: f64 },
}

impl KFunction {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = match *self {
            KFunction::Linear { slope } => slope > 0.0,
            KFunction::Quadratic { coeff } => coeff > 0.0,
            KFunction::Power { coeff, exponent } => coeff > 0.0 && exponent > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArguments(
                "comparison functions need positive coefficients and exponents".into(),
            ))
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            KFunction::Linear { slope } => slope * v,
            KFunction::Quadratic { coeff } => coeff * v * v,
            KFunction::Power { coeff, exponent } => coeff * v.powf(exponent),
        }
    }

    /// Inverse on [0, inf); closed form where available, monotone
    /// bisection otherwise.
    pub fn inverse(&self, y: f64) -> Result<f64, CoreError> {
        if y < 0.0 {
            return Err(CoreError::InvalidArguments(
                "class-K inverse needs a nonnegative argument".into(),
            ));
        }
        Ok(match *self {
            KFunction::Linear { slope } => y / slope,
            KFunction::Quadratic { coeff } => (y / coeff).sqrt(),
            KFunction::Power { .. } => invert_monotone(|v| self.eval(v), y),
        })
    }
}

/// Inverts a continuous strictly increasing function with f(0) = 0 by
/// doubling a bracket and bisecting to relative tolerance 1e-12.
fn invert_monotone(f: impl Fn(f64) -> f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let mut hi = 1.0_f64;
    let mut guard = 0;
    while f(hi) < y && guard < 4096 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0_f64;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Decay and gain constants feeding the disturbance-to-state bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainTerms {
    /// Flow decay rates of the two phases, > 0.
    pub rho0: f64,
    pub rho1: f64,
    /// Jump margin rates of the two phases, > 0.
    pub theta0: f64,
    pub theta1: f64,
    /// Composite decay rate; must lie in the admissible interval derived
    /// from the decay rates and the comparison curves.
    pub eps_tilde: f64,
    /// Minimum inter-transmission interval, > 0.
    pub eps_min: f64,
    /// Lower comparison function of the composite Lyapunov function.
    pub alpha1: KFunction,
    /// Upper comparison function.
    pub alpha2: KFunction,
    /// Feedforward jump gain.
    pub alpha3: KFunction,
    /// Feedforward flow gain.
    pub sigma1: KFunction,
}

impl GainTerms {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.rho0 > 0.0 && self.rho1 > 0.0 && self.theta0 > 0.0 && self.theta1 > 0.0) {
            return Err(CoreError::InvalidArguments(
                "decay and margin rates must be positive".into(),
            ));
        }
        if !(self.eps_min > 0.0) {
            return Err(CoreError::InvalidArguments(
                "the minimum transmission interval must be positive".into(),
            ));
        }
        self.alpha1.validate()?;
        self.alpha2.validate()?;
        self.alpha3.validate()?;
        self.sigma1.validate()
    }

    /// Base decay rate: the smallest of the flow and jump rates.
    pub fn eps_bar(&self) -> f64 {
        self.rho0.min(self.rho1).min(self.theta0).min(self.theta1)
    }

    /// Upper end of the admissible interval for `eps_tilde`.
    pub fn eps_tilde_cap(&self, params: &TradeoffParams) -> f64 {
        self.eps_bar()
            * 1.0_f64
                .min(params.phi00 / params.gamma0)
                .min(params.phi10 / params.gamma1)
    }
}

/// Evaluates the closed-form disturbance-to-state gain
/// `alpha1^{-1}(4 (sigma1(v)/eps_tilde + alpha3(v)) / (1 - exp(-eps_min *
/// eps_tilde)))`: zero at zero and strictly increasing.
pub fn iss_gain(params: &TradeoffParams, gains: &GainTerms, v: f64) -> Result<f64, CoreError> {
    params.validate()?;
    gains.validate()?;
    if v < 0.0 {
        return Err(CoreError::InvalidArguments(
            "disturbance magnitude must be nonnegative".into(),
        ));
    }
    let cap = gains.eps_tilde_cap(params);
    if !(gains.eps_tilde > 0.0 && gains.eps_tilde < cap) {
        return Err(CoreError::InvalidArguments(format!(
            "eps_tilde = {} outside the admissible interval (0, {cap})",
            gains.eps_tilde
        )));
    }
    let numerator = 4.0 * (gains.sigma1.eval(v) / gains.eps_tilde + gains.alpha3.eval(v));
    let denominator = 1.0 - (-gains.eps_min * gains.eps_tilde).exp();
    gains.alpha1.inverse(numerator / denominator)
}

/// One row of an initial-value sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub phi00: f64,
    pub phi10: f64,
    pub h_mati: f64,
    pub h_mad: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub diagnostics: Vec<String>,
}

/// Recomputes the interval/delay pair over the cartesian product of
/// initial values. A failing combination flags its own row instead of
/// aborting the sweep.
pub fn sweep(
    template: &TradeoffParams,
    phi00_list: &[f64],
    phi10_list: &[f64],
) -> Result<Vec<SweepRow>, CoreError> {
    if phi00_list.is_empty() || phi10_list.is_empty() {
        return Err(CoreError::InvalidArguments(
            "sweep lists must be non-empty".into(),
        ));
    }
    let mut rows = Vec::with_capacity(phi00_list.len() * phi10_list.len());
    for &phi00 in phi00_list {
        for &phi10 in phi10_list {
            let mut params = *template;
            params.phi00 = phi00;
            params.phi10 = phi10;
            match compute_mati_mad(&params) {
                Ok(res) => rows.push(SweepRow {
                    phi00,
                    phi10,
                    h_mati: res.h_mati,
                    h_mad: res.h_mad,
                    error: None,
                    diagnostics: res.diagnostics,
                }),
                Err(e) => rows.push(SweepRow {
                    phi00,
                    phi10,
                    h_mati: f64::NAN,
                    h_mad: f64::NAN,
                    error: Some(e.to_string()),
                    diagnostics: Vec::new(),
                }),
            }
        }
    }
    Ok(rows)
}
