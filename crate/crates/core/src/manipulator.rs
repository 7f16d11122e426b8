//! Worked example: a torque-driven single-link arm tracking a periodic
//! reference through a shared network.
//!
//! The plant is `q1' = q2`, `q2' = -m cos(q1) + a u`, measured in full. A
//! static output feedback `u_ct = -(m sin(y1/2) + y1 + y2) / a` contracts
//! the tracking error around the reference trajectory driven by the
//! feedforward `u_f(t) = 2 cos(5 t)`. Three network nodes carry the two
//! measured states and the input channel; the feedforward either rides on
//! the input node or reaches the reference system directly, depending on
//! the protocol variant.
//!
//! Everything here is glue: the module wires the generic closed loop to
//! this concrete plant, derives its contraction and gain constants, checks
//! the storage-function residual for candidate quadratic forms, and
//! regenerates the benchmark tables and traces.

use crate::error::CoreError;
use crate::hybrid::{fmt_f64, Horizon};
use crate::model::{
    assemble, DelayPolicy, IntervalPolicy, NetworkConfig, NqcsModel, SimulationTrace,
    SystemDefinition, TraceMetrics,
};
use crate::quantize::QuantizerSpec;
use crate::schedule::{uges_constants, GrowthBounds, NodeSignal, ProtocolKind, ProtocolTag};
use crate::tradeoff::{compute_mati_mad, condition_rows, ConditionRow, TradeoffParams};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

/// Physical and design constants of the arm benchmark.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipulatorParams {
    /// Gravity torque coefficient.
    pub m: f64,
    /// Input gain.
    pub a: f64,
    /// Error weight of the protocol storage functions.
    pub varpi: f64,
    /// Coefficient of the quadratic decay and margin bounds.
    pub pi_weight: f64,
    /// Balance weight of the transmit phase; the arrival-phase weight is
    /// tied to it through the protocol's block weighting.
    pub rho0: f64,
    /// Per-node quantizer resolution ratio.
    pub delta: f64,
    /// Zoom factor applied to every node range on each arrival.
    pub omega: f64,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            m: 4.905,
            a: 2.0,
            varpi: 0.005,
            pi_weight: 0.005,
            rho0: 1.0,
            delta: 0.8,
            omega: 0.6,
        }
    }
}

impl ManipulatorParams {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.m > 0.0
            && self.a > 0.0
            && self.varpi > 0.0
            && self.pi_weight > 0.0
            && self.rho0 > 0.0
            && self.delta > 0.0
            && self.omega > 0.0
            && self.omega < 1.0)
        {
            return Err(CoreError::InvalidArguments(
                "arm parameters must be positive, with omega in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// The plant, static output feedback, and feedforward wired together.
pub fn manipulator_system(p: &ManipulatorParams) -> SystemDefinition {
    let (m, a) = (p.m, p.a);
    SystemDefinition {
        n_p: 2,
        n_c: 0,
        n_u: 1,
        n_y: 2,
        f_p: Box::new(move |x, u| vec![x[1], -m * x[0].cos() + a * u[0]]),
        g_p: Box::new(|x| x.to_vec()),
        jac_g_p: Some(Box::new(|_| vec![vec![1.0, 0.0], vec![0.0, 1.0]])),
        f_c: Box::new(|_, _| Vec::new()),
        g_c: Box::new(move |_, y| vec![-(m * (0.5 * y[0]).sin() + y[0] + y[1]) / a]),
        jac_g_c: None,
        u_f: Box::new(|t| vec![2.0 * (5.0 * t).cos()]),
        du_f: Box::new(|t| vec![-10.0 * (5.0 * t).sin()]),
        allow_finite_difference: false,
    }
}

/// Node layout: one node per measured state, one for the input channel.
///
/// Under the tracking variant the feedforward reaches the reference system
/// directly and the input node carries the controller output alone; the
/// other protocols transmit the feedforward on the input node.
pub fn manipulator_protocol(tag: ProtocolTag) -> ProtocolKind {
    let nodes = match tag {
        ProtocolTag::TodTracking => vec![
            NodeSignal::Measurement { df: 0..1 },
            NodeSignal::Measurement { df: 1..2 },
            NodeSignal::Actuation { ct: 2..3, f: 3..3 },
        ],
        _ => vec![
            NodeSignal::Measurement { df: 0..1 },
            NodeSignal::Measurement { df: 1..2 },
            NodeSignal::Actuation { ct: 2..3, f: 3..4 },
        ],
    };
    ProtocolKind::new(tag, nodes)
}

/// Zoom quantizer over the protocol's node blocks. `range_ratio` sets the
/// range-to-resolution ratio per node; long runs need it large because the
/// ranges contract geometrically with every arrival.
pub fn manipulator_quantizer(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    range_ratio: f64,
) -> QuantizerSpec {
    let dims = manipulator_protocol(tag).node_dims();
    QuantizerSpec::zoom(&dims, p.delta, range_ratio, p.omega)
}

/// Assembles the networked arm for one protocol variant.
pub fn manipulator_model(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    net: NetworkConfig,
    range_ratio: f64,
) -> Result<NqcsModel, CoreError> {
    p.validate()?;
    assemble(
        manipulator_system(p),
        manipulator_quantizer(p, tag, range_ratio),
        manipulator_protocol(tag),
        net,
    )
}

/// Growth bound of the tracking flow in the stacked measured errors: the
/// worst-case gravity slope plus the input path over a three-component
/// error vector.
pub fn growth_e1(p: &ManipulatorParams) -> f64 {
    p.m + 3.0_f64.sqrt() * p.a.max(1.0)
}

/// Gain bound entering the squared flow weights: the measured errors act
/// on the tracking flow with per-component coefficients at most
/// `max(1 + m, a)`.
pub fn tracking_gain_e2(p: &ManipulatorParams) -> f64 {
    3.0_f64.sqrt() * (1.0 + p.m).max(p.a)
}

/// One set of the four storage-cascade constants.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstantsReading {
    pub l0: f64,
    pub l1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
}

/// Contraction and gain constants of the arm example.
///
/// `derived` recomputes every constant from the growth bounds and the
/// protocol certificate. `reported` is the constant set this benchmark is
/// usually quoted with; it differs from the derived set by fixed factors
/// per entry, so both readings are kept and the `ratio` field makes the
/// gap visible instead of silently picking one.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExampleConstants {
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Error weight of the storage function, protocol block weight included.
    pub m1: f64,
    pub varrho0: f64,
    pub varrho1: f64,
    /// Growth bound of the tracking flow in the measured errors.
    pub e1: f64,
    /// Gain bound entering the squared flow weights.
    pub e2: f64,
    pub derived: ConstantsReading,
    pub reported: ConstantsReading,
    /// reported / derived, entry by entry.
    pub ratio: ConstantsReading,
}

fn reported_reading(tag: ProtocolTag) -> ConstantsReading {
    match tag {
        ProtocolTag::RoundRobin => ConstantsReading {
            l0: 17.7150,
            l1: 37.5792,
            gamma0: 7.2325,
            gamma1: 22.3450,
        },
        _ => ConstantsReading {
            l0: 10.2278,
            l1: 21.6964,
            gamma0: 7.2325,
            gamma1: 22.3450,
        },
    }
}

/// Derives the cascade constants for one protocol variant, alongside the
/// reported set.
pub fn example_constants(
    p: &ManipulatorParams,
    tag: ProtocolTag,
) -> Result<ExampleConstants, CoreError> {
    p.validate()?;
    let protocol = manipulator_protocol(tag);
    // The certificate does not depend on the range ratio; any admissible
    // value works here.
    let quant = manipulator_quantizer(p, tag, 50.0);
    let e1 = growth_e1(p);
    let e2 = tracking_gain_e2(p);
    let growth = GrowthBounds { m_e: e1, m_f: p.a };
    let cert = uges_constants(&protocol, &quant, p.varpi, Some(&growth))?;
    let l0 = cert
        .l0
        .ok_or_else(|| CoreError::NumericalFailure("certificate lacks the l0 constant".into()))?;
    let l1 = cert
        .l1
        .ok_or_else(|| CoreError::NumericalFailure("certificate lacks the l1 constant".into()))?;
    let varrho0 = p.rho0;
    let varrho1 = varrho0 * cert.lambda2 / cert.lambda1;
    let weight_ratio = cert.lambda2 / cert.lambda1;
    let gamma0 = (p.pi_weight + varrho0 * e2 * e2).sqrt();
    let gamma1 = (p.pi_weight + varrho1 * weight_ratio * weight_ratio * e2 * e2).sqrt();
    let derived = ConstantsReading {
        l0,
        l1,
        gamma0,
        gamma1,
    };
    let reported = reported_reading(tag);
    let ratio = ConstantsReading {
        l0: reported.l0 / derived.l0,
        l1: reported.l1 / derived.l1,
        gamma0: reported.gamma0 / derived.gamma0,
        gamma1: reported.gamma1 / derived.gamma1,
    };
    Ok(ExampleConstants {
        lambda: cert.lambda,
        lambda1: cert.lambda1,
        lambda2: cert.lambda2,
        m1: cert.m1,
        varrho0,
        varrho1,
        e1,
        e2,
        derived,
        reported,
        ratio,
    })
}

/// Curve parameters from explicitly chosen balance weights; the flow
/// weights are recomputed from the squared gain bound under those weights.
pub fn balanced_tradeoff_params(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    rho0: f64,
    rho1: f64,
    phi00: f64,
    phi10: f64,
) -> Result<TradeoffParams, CoreError> {
    if !(rho0 > 0.0 && rho1 > 0.0) {
        return Err(CoreError::InvalidArguments(
            "balance weights must be positive".into(),
        ));
    }
    let c = example_constants(p, tag)?;
    let e2sq = c.e2 * c.e2;
    let weight_ratio = (c.lambda2 / c.lambda1).powi(2);
    Ok(TradeoffParams {
        l0: c.derived.l0,
        l1: c.derived.l1,
        gamma0: (p.pi_weight + rho0 * e2sq).sqrt(),
        gamma1: (p.pi_weight + rho1 * weight_ratio * e2sq).sqrt(),
        lambda: c.lambda,
        rho0,
        rho1,
        phi00,
        phi10,
    })
}

/// Curve parameters under the derived constants.
pub fn derived_tradeoff_params(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    phi00: f64,
    phi10: f64,
) -> Result<TradeoffParams, CoreError> {
    let c = example_constants(p, tag)?;
    Ok(TradeoffParams {
        l0: c.derived.l0,
        l1: c.derived.l1,
        gamma0: c.derived.gamma0,
        gamma1: c.derived.gamma1,
        lambda: c.lambda,
        rho0: c.varrho0,
        rho1: c.varrho1,
        phi00,
        phi10,
    })
}

/// Curve parameters under the reported constants.
pub fn reported_tradeoff_params(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    phi00: f64,
    phi10: f64,
) -> Result<TradeoffParams, CoreError> {
    let c = example_constants(p, tag)?;
    Ok(TradeoffParams {
        l0: c.reported.l0,
        l1: c.reported.l1,
        gamma0: c.reported.gamma0,
        gamma1: c.reported.gamma1,
        lambda: c.lambda,
        rho0: c.varrho0,
        rho1: c.varrho1,
        phi00,
        phi10,
    })
}

/// Largest transmit-phase balance weight for which the delay condition can
/// still hold at `tau = 0`, holding the flow weights fixed; beyond it the
/// two admissibility conditions have no common point.
pub fn max_rho0(gamma0: f64, gamma1: f64, phi00: f64, phi10: f64) -> f64 {
    gamma1 * phi10 / (gamma0 * phi00) - 1.0
}

/// Candidate storage weighting `phi1 eta1^2 + phi2 eta1 eta2 + phi3 eta2^2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticForm {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl QuadraticForm {
    pub fn eval(&self, eta: &[f64]) -> f64 {
        self.phi1 * eta[0] * eta[0] + self.phi2 * eta[0] * eta[1] + self.phi3 * eta[1] * eta[1]
    }

    pub fn gradient(&self, eta: &[f64]) -> [f64; 2] {
        [
            2.0 * self.phi1 * eta[0] + self.phi2 * eta[1],
            self.phi2 * eta[0] + 2.0 * self.phi3 * eta[1],
        ]
    }

    /// Eigenvalues (min, max) of the symmetric coefficient matrix.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.phi1 + self.phi3);
        let disc = (0.25 * (self.phi1 - self.phi3).powi(2) + 0.25 * self.phi2 * self.phi2).sqrt();
        (mean - disc, mean + disc)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.phi1 > 0.0 && self.phi1 * self.phi3 > 0.25 * self.phi2 * self.phi2
    }
}

/// Outcome of the storage-function residual check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Assumption6Report {
    pub holds: bool,
    /// Largest residual over the sampled unit circle; the condition holds
    /// when it is nonpositive.
    pub worst_margin: f64,
    pub worst_direction: [f64; 2],
    pub eigenvalues: (f64, f64),
    pub grid_points: usize,
}

/// Checks the storage-function residual for a candidate quadratic form.
///
/// The angle-dependent gravity coefficient of the tracking flow lies in
/// `[-m, m]` and is absorbed into the squared error gains beforehand, so
/// the residual compares pure quadratics: the form's flow coupling must
/// stay below `-pi_weight |eta|^2 - H(eta)^2`, where `H` collects the
/// protocol-weighted storage coupling of the gradient direction. Both
/// sides are homogeneous of degree two, so sampling the unit circle
/// decides the condition globally.
pub fn verify_assumption6(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    form: &QuadraticForm,
    grid_points: usize,
) -> Result<Assumption6Report, CoreError> {
    p.validate()?;
    if grid_points < 8 {
        return Err(CoreError::InvalidArguments(
            "the residual grid needs at least 8 points".into(),
        ));
    }
    let (lo, hi) = form.eigenvalues();
    if !(lo > 0.0) {
        return Err(CoreError::InvalidWeighting(format!(
            "quadratic form is not positive definite: eigenvalues {lo:.6}, {hi:.6}"
        )));
    }
    let c = example_constants(p, tag)?;
    let inv_sum = 1.0 / c.varrho0 + 1.0 / c.varrho1;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_direction = [1.0, 0.0];
    for k in 0..grid_points {
        let th = 2.0 * PI * k as f64 / grid_points as f64;
        let (n1, n2) = (th.cos(), th.sin());
        let residual = -form.phi2 * n1 * n1
            + (2.0 * form.phi1 - 2.0 * form.phi3 - form.phi2) * n1 * n2
            - (2.0 * form.phi3 - form.phi2) * n2 * n2
            + inv_sum * (form.phi2 * n1 + 2.0 * form.phi3 * n2).powi(2);
        let h = c.m1 * (n1.abs() + (n1 + n2).abs());
        let margin = residual + p.pi_weight + h * h;
        if margin > worst {
            worst = margin;
            worst_direction = [n1, n2];
        }
    }
    Ok(Assumption6Report {
        holds: worst <= 0.0,
        worst_margin: worst,
        worst_direction,
        eigenvalues: (lo, hi),
        grid_points,
    })
}

/// Scans a coefficient grid for the feasible quadratic form with the most
/// negative residual.
pub fn search_quadratic_form(
    p: &ManipulatorParams,
    tag: ProtocolTag,
) -> Result<(QuadraticForm, Assumption6Report), CoreError> {
    p.validate()?;
    let mut best: Option<(QuadraticForm, Assumption6Report)> = None;
    for i2 in 1..=8 {
        let phi2 = 0.0125 * i2 as f64;
        for i1 in 1..=16 {
            let phi1 = 0.025 * i1 as f64;
            for i3 in 1..=16 {
                let phi3 = 0.025 * i3 as f64;
                let form = QuadraticForm { phi1, phi2, phi3 };
                if !form.is_positive_definite() {
                    continue;
                }
                let report = verify_assumption6(p, tag, &form, 256)?;
                if report.holds
                    && best
                        .as_ref()
                        .map_or(true, |(_, b)| report.worst_margin < b.worst_margin)
                {
                    best = Some((form, report));
                }
            }
        }
    }
    best.ok_or_else(|| {
        CoreError::NumericalFailure("no feasible quadratic form in the scanned grid".into())
    })
}

/// One benchmark row: a protocol, curve initial values, and the
/// interval/delay pair reported for them.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FigureTarget {
    pub tag: ProtocolTag,
    pub phi00: f64,
    pub phi10: f64,
    pub h_mati: f64,
    pub h_mad: f64,
}

/// The six reported interval/delay pairs.
pub fn figure_targets() -> Vec<FigureTarget> {
    let s3 = 3.0_f64.sqrt();
    let s2 = 2.0_f64.sqrt();
    vec![
        FigureTarget {
            tag: ProtocolTag::RoundRobin,
            phi00: s3,
            phi10: s3,
            h_mati: 0.0242,
            h_mad: 0.00390,
        },
        FigureTarget {
            tag: ProtocolTag::Tod,
            phi00: s3,
            phi10: s3 + 1.0,
            h_mati: 0.0256,
            h_mad: 0.00385,
        },
        FigureTarget {
            tag: ProtocolTag::RoundRobin,
            phi00: s2,
            phi10: s2,
            h_mati: 0.0255,
            h_mad: 0.00425,
        },
        FigureTarget {
            tag: ProtocolTag::Tod,
            phi00: s2,
            phi10: s2 + 1.0,
            h_mati: 0.0242,
            h_mad: 0.0069,
        },
        FigureTarget {
            tag: ProtocolTag::RoundRobin,
            phi00: 2.0,
            phi10: 2.0,
            h_mati: 0.02375,
            h_mad: 0.00365,
        },
        FigureTarget {
            tag: ProtocolTag::Tod,
            phi00: 2.0,
            phi10: 3.0,
            h_mati: 0.02615,
            h_mad: 0.0024,
        },
    ]
}

/// Runs one networked tracking simulation at a constant rate and delay.
///
/// The reference starts at `x_rf0` and the plant offset from it by `eta0`;
/// every node starts with quantizer range parameter `mu0`. The tracking
/// loop contracts uniformly only while the reference swings around the
/// arm's rest pose, so decay studies should start the reference near
/// `(-pi/2, 0)`; launched from the origin it slowly climbs through poses
/// where the gravity coupling destabilizes the loop.
#[allow(clippy::too_many_arguments)]
pub fn run_example(
    p: &ManipulatorParams,
    tag: ProtocolTag,
    h: f64,
    delay: f64,
    t_end: f64,
    eta0: [f64; 2],
    x_rf0: [f64; 2],
    mu0: f64,
    range_ratio: f64,
    step: f64,
) -> Result<(NqcsModel, SimulationTrace), CoreError> {
    let net = NetworkConfig {
        eps_min: h,
        h_mati: h,
        h_mad: delay,
        dropouts: 0,
        interval_policy: IntervalPolicy::Constant { h },
        delay_policy: DelayPolicy::Constant { tau: delay },
        seed: 0,
    };
    let model = manipulator_model(p, tag, net, range_ratio)?;
    let s0 = model.initial_state(eta0.to_vec(), Vec::new(), x_rf0.to_vec(), vec![mu0; 3])?;
    let horizon = Horizon {
        t_max: t_end,
        j_max: (4.0 * t_end / h).ceil() as u64 + 16,
    };
    let trace = model.simulate(&s0, horizon, step)?;
    Ok((model, trace))
}

/// Achieved interval/delay pair for one comparison-curve table.
#[derive(Clone, Debug, Serialize)]
pub struct TradeoffFigure {
    pub figure: String,
    pub protocol: ProtocolTag,
    pub phi00: f64,
    pub phi10: f64,
    pub target_h_mati: f64,
    pub target_h_mad: f64,
    pub h_mati: f64,
    pub h_mad: f64,
    pub diagnostics: Vec<String>,
}

/// Norm summary for one simulated trace.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationFigure {
    pub figure: String,
    pub protocol: ProtocolTag,
    pub h: f64,
    pub delay: f64,
    pub t_end: f64,
    pub eta0: [f64; 2],
    pub mu0: f64,
    pub range_ratio: f64,
    pub metrics: TraceMetrics,
}

/// Everything `reproduce_figures` writes, returned for inspection.
#[derive(Clone, Debug, Serialize)]
pub struct FigureSummary {
    pub tradeoff: Vec<TradeoffFigure>,
    pub simulations: Vec<SimulationFigure>,
    /// Largest transmit-phase weight with a nonempty admissible region
    /// under the reported constants.
    pub max_rho0: f64,
}

/// Horizon of the benchmark traces (seconds).
pub const FIG_T_END: f64 = 10.0;
/// Integrator step of the benchmark traces.
pub const FIG_STEP: f64 = 1e-3;
/// Initial per-node range parameter.
pub const FIG_MU0: f64 = 5.0;
/// Range-to-resolution ratio of the benchmark traces. The zoom factor
/// contracts every node range on each of the ~400 arrivals of a 10 s run,
/// so the initial ratio must cover the whole contraction for the ranges
/// to keep enclosing the signals. Once the ranges pass below machine
/// precision relative to the signals (after roughly 70 arrivals) the
/// computed quantization error floors at f64 rounding instead of the
/// nominal resolution; that is the zero-error limit the contraction
/// drives toward, reached early.
pub const FIG_RANGE_RATIO: f64 = 1e95;
/// Initial tracking offset of the benchmark traces.
pub const FIG_ETA0: [f64; 2] = [1.0, 1.0];
/// Initial reference state of the benchmark traces: rest at the arm's
/// stable pose, where the forced swing stays inside the uniformly
/// contracting region of the tracking loop.
pub const FIG_X_RF0: [f64; 2] = [-PI / 2.0, 0.0];

fn write_text(path: &Path, text: &str) -> Result<(), CoreError> {
    fs::write(path, text)
        .map_err(|e| CoreError::Configuration(format!("cannot write {}: {e}", path.display())))
}

fn write_curve_csv(path: &Path, rows: &[ConditionRow]) -> Result<(), CoreError> {
    let mut out =
        String::from("tau,phi0,phi1,lhs_interval,rhs_interval,lhs_delay,rhs_delay\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(r.tau),
            fmt_f64(r.phi0),
            fmt_f64(r.phi1),
            fmt_f64(r.lhs_interval),
            fmt_f64(r.rhs_interval),
            fmt_f64(r.lhs_delay),
            fmt_f64(r.rhs_delay),
        ));
    }
    write_text(path, &out)
}

fn write_sim_csv(
    path: &Path,
    model: &NqcsModel,
    trace: &SimulationTrace,
) -> Result<(), CoreError> {
    let mut out = String::from("t,j,eta1,eta2,eta_norm\n");
    for (ht, x) in &trace.arc.records {
        let dec = model.decode(x);
        let norm = dec.state.eta.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(ht.t),
            ht.j,
            fmt_f64(dec.state.eta[0]),
            fmt_f64(dec.state.eta[1]),
            fmt_f64(norm),
        ));
    }
    write_text(path, &out)
}

/// Regenerates the benchmark outputs into `out_dir`: comparison-curve
/// tables (`fig2.csv`, `fig3.csv`), networked tracking traces at the
/// reported rates (`fig4.csv`, `fig5.csv`, `fig6.csv`), and
/// `summary.json` with achieved-versus-target values.
///
/// The curve tables use the reported constants, under which the interval
/// condition already fails at `tau = 0`; the summary records the zero
/// interval together with its diagnostic instead of substituting a pair.
pub fn reproduce_figures(
    p: &ManipulatorParams,
    out_dir: &Path,
) -> Result<FigureSummary, CoreError> {
    p.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| {
        CoreError::Configuration(format!("cannot create {}: {e}", out_dir.display()))
    })?;
    let targets = figure_targets();

    let mut tradeoff = Vec::new();
    for (figure, target) in [("fig2", &targets[0]), ("fig3", &targets[1])] {
        let params = reported_tradeoff_params(p, target.tag, target.phi00, target.phi10)?;
        let result = compute_mati_mad(&params)?;
        let curves = result.curves.as_ref().expect("curves are always sampled");
        write_curve_csv(
            &out_dir.join(format!("{figure}.csv")),
            &condition_rows(&params, curves),
        )?;
        tradeoff.push(TradeoffFigure {
            figure: figure.into(),
            protocol: target.tag,
            phi00: target.phi00,
            phi10: target.phi10,
            target_h_mati: target.h_mati,
            target_h_mad: target.h_mad,
            h_mati: result.h_mati,
            h_mad: result.h_mad,
            diagnostics: result.diagnostics,
        });
    }

    let runs = [
        ("fig4", ProtocolTag::RoundRobin, targets[0].h_mati, targets[0].h_mad),
        ("fig5", ProtocolTag::Tod, targets[1].h_mati, targets[1].h_mad),
        ("fig6", ProtocolTag::TodTracking, targets[1].h_mati, targets[1].h_mad),
    ];
    let mut simulations = Vec::new();
    for (figure, tag, h, delay) in runs {
        let (model, trace) = run_example(
            p,
            tag,
            h,
            delay,
            FIG_T_END,
            FIG_ETA0,
            FIG_X_RF0,
            FIG_MU0,
            FIG_RANGE_RATIO,
            FIG_STEP,
        )?;
        write_sim_csv(&out_dir.join(format!("{figure}.csv")), &model, &trace)?;
        simulations.push(SimulationFigure {
            figure: figure.into(),
            protocol: tag,
            h,
            delay,
            t_end: FIG_T_END,
            eta0: FIG_ETA0,
            mu0: FIG_MU0,
            range_ratio: FIG_RANGE_RATIO,
            metrics: trace.metrics,
        });
    }

    let reported = reported_reading(ProtocolTag::RoundRobin);
    let summary = FigureSummary {
        tradeoff,
        simulations,
        max_rho0: max_rho0(
            reported.gamma0,
            reported.gamma1,
            3.0_f64.sqrt(),
            3.0_f64.sqrt(),
        ),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CoreError::Configuration(format!("cannot serialize summary: {e}")))?;
    write_text(&out_dir.join("summary.json"), &json)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn default_parameters_validate() {
        ManipulatorParams::default().validate().unwrap();
        let bad = ManipulatorParams {
            omega: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn controller_cancels_at_the_origin() {
        let sys = manipulator_system(&ManipulatorParams::default());
        let u = (sys.g_c)(&[], &[0.0, 0.0]);
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn plant_input_gain_at_quarter_turn() {
        let p = ManipulatorParams::default();
        let sys = manipulator_system(&p);
        let dx = (sys.f_p)(&[std::f64::consts::FRAC_PI_2, 0.3], &[0.7]);
        assert_eq!(dx[0], 0.3);
        assert_abs_diff_eq!(dx[1], p.a * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn feedforward_starts_at_two() {
        let sys = manipulator_system(&ManipulatorParams::default());
        assert_eq!((sys.u_f)(0.0), vec![2.0]);
        assert_eq!((sys.du_f)(0.0), vec![0.0]);
    }

    #[test]
    fn exact_tracking_is_an_equilibrium_of_the_arm() {
        let p = ManipulatorParams::default();
        let net = NetworkConfig {
            eps_min: 0.01,
            h_mati: 0.0256,
            h_mad: 0.00385,
            dropouts: 0,
            interval_policy: IntervalPolicy::Constant { h: 0.0256 },
            delay_policy: DelayPolicy::Constant { tau: 0.00385 },
            seed: 0,
        };
        let model = manipulator_model(&p, ProtocolTag::TodTracking, net, 50.0).unwrap();
        for x_rf in [[0.0, 0.0], [0.7, -0.3], [-1.2, 2.0]] {
            let s = model
                .initial_state(vec![0.0, 0.0], Vec::new(), x_rf.to_vec(), vec![1.0; 3])
                .unwrap();
            for t in [0.0, 0.37, 1.9] {
                let parts = model.flow_parts(&s, t).unwrap();
                for v in &parts.f_eta {
                    assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn growth_constants_match_the_plant_bounds() {
        let p = ManipulatorParams::default();
        assert_relative_eq!(growth_e1(&p), 8.369101615137754, max_relative = 1e-12);
        assert_relative_eq!(tracking_gain_e2(&p), 10.227760018694223, max_relative = 1e-12);
        // The reported input-channel constant coincides with the gain bound.
        let c = example_constants(&p, ProtocolTag::Tod).unwrap();
        assert_abs_diff_eq!(c.reported.l0, c.e2, epsilon = 5e-5);
    }

    #[test]
    fn contraction_constants_round_robin() {
        let c = example_constants(&ManipulatorParams::default(), ProtocolTag::RoundRobin).unwrap();
        assert_abs_diff_eq!(c.lambda, (2.0_f64 / 3.0).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(c.lambda, 0.81650, epsilon = 5e-6);
        assert_eq!(c.lambda1, c.lambda);
        assert_relative_eq!(c.lambda2, 3.0_f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(c.m1, 0.005 * 3.0_f64.sqrt(), max_relative = 1e-12);
        assert_abs_diff_eq!(c.varrho1, 2.12132, epsilon = 1e-5);
    }

    #[test]
    fn contraction_constants_tod() {
        let c = example_constants(&ManipulatorParams::default(), ProtocolTag::Tod).unwrap();
        assert_eq!(c.lambda1, c.lambda);
        assert_relative_eq!(c.lambda2, 1.0, max_relative = 1e-12);
        assert_relative_eq!(c.m1, 0.005, max_relative = 1e-12);
        assert_abs_diff_eq!(c.varrho1, 1.224745, epsilon = 1e-6);
    }

    #[test]
    fn derived_reading_follows_the_gain_formulas() {
        let p = ManipulatorParams::default();
        for tag in [ProtocolTag::RoundRobin, ProtocolTag::Tod, ProtocolTag::TodTracking] {
            let c = example_constants(&p, tag).unwrap();
            let block = if tag == ProtocolTag::RoundRobin {
                3.0_f64.sqrt()
            } else {
                1.0
            };
            assert_relative_eq!(c.derived.l0, block * c.e1, max_relative = 1e-12);
            assert_relative_eq!(
                c.derived.l1,
                c.derived.l0 * c.lambda2 / c.lambda1,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                c.derived.gamma0 * c.derived.gamma0 - p.pi_weight,
                c.varrho0 * c.e2 * c.e2,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                c.derived.gamma1 * c.derived.gamma1 - p.pi_weight,
                c.varrho1 * (c.lambda2 / c.lambda1).powi(2) * c.e2 * c.e2,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn reported_reading_round_robin_verbatim() {
        let c = example_constants(&ManipulatorParams::default(), ProtocolTag::RoundRobin).unwrap();
        assert_eq!(c.reported.l0, 17.7150);
        assert_eq!(c.reported.l1, 37.5792);
        assert_eq!(c.reported.gamma0, 7.2325);
        assert_eq!(c.reported.gamma1, 22.3450);
    }

    #[test]
    fn reported_reading_tod_verbatim() {
        for tag in [ProtocolTag::Tod, ProtocolTag::TodTracking] {
            let c = example_constants(&ManipulatorParams::default(), tag).unwrap();
            assert_eq!(c.reported.l0, 10.2278);
            assert_eq!(c.reported.l1, 21.6964);
            assert_eq!(c.reported.gamma0, 7.2325);
            assert_eq!(c.reported.gamma1, 22.3450);
        }
    }

    #[test]
    fn reported_constants_yield_no_admissible_interval() {
        let p = ManipulatorParams::default();
        let s3 = 3.0_f64.sqrt();
        let params = reported_tradeoff_params(&p, ProtocolTag::RoundRobin, s3, s3).unwrap();
        let result = compute_mati_mad(&params).unwrap();
        assert_eq!(result.h_mati, 0.0);
        assert!(result
            .diagnostics
            .iter()
            .any(|d| d.contains("interval condition fails at tau = 0")));
    }

    #[test]
    fn max_rho0_limit_matches_the_survey() {
        let s3 = 3.0_f64.sqrt();
        assert_abs_diff_eq!(max_rho0(7.2325, 22.3450, s3, s3), 2.0896, epsilon = 1e-3);
    }

    #[test]
    fn identity_form_is_positive_definite_but_fails() {
        let p = ManipulatorParams::default();
        let form = QuadraticForm {
            phi1: 1.0,
            phi2: 0.0,
            phi3: 1.0,
        };
        let (lo, hi) = form.eigenvalues();
        assert_eq!((lo, hi), (1.0, 1.0));
        let report = verify_assumption6(&p, ProtocolTag::RoundRobin, &form, 720).unwrap();
        assert!(!report.holds);
        assert!(report.worst_margin > 0.0);
    }

    #[test]
    fn nonpositive_cross_weight_fails() {
        let p = ManipulatorParams::default();
        let form = QuadraticForm {
            phi1: 0.125,
            phi2: -0.05,
            phi3: 0.1,
        };
        assert!(form.is_positive_definite());
        let report = verify_assumption6(&p, ProtocolTag::RoundRobin, &form, 720).unwrap();
        assert!(!report.holds);
    }

    #[test]
    fn indefinite_form_is_rejected_with_eigenvalues() {
        let p = ManipulatorParams::default();
        let form = QuadraticForm {
            phi1: 0.1,
            phi2: 1.0,
            phi3: 0.1,
        };
        let err = verify_assumption6(&p, ProtocolTag::RoundRobin, &form, 720).unwrap_err();
        match err {
            CoreError::InvalidWeighting(msg) => assert!(msg.contains("eigenvalues")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn feasible_form_certifies_for_both_protocols() {
        let p = ManipulatorParams::default();
        let form = QuadraticForm {
            phi1: 0.125,
            phi2: 0.05,
            phi3: 0.1,
        };
        let (lo, hi) = form.eigenvalues();
        assert_abs_diff_eq!(lo, 0.0845492, epsilon = 1e-6);
        assert_abs_diff_eq!(hi, 0.1404508, epsilon = 1e-6);
        for tag in [ProtocolTag::RoundRobin, ProtocolTag::Tod] {
            let report = verify_assumption6(&p, tag, &form, 720).unwrap();
            assert!(report.holds, "{tag:?} margin {}", report.worst_margin);
            assert!(report.worst_margin < -0.02 && report.worst_margin > -0.06);
        }
    }

    #[test]
    fn search_returns_a_feasible_form() {
        let p = ManipulatorParams::default();
        let (form, report) = search_quadratic_form(&p, ProtocolTag::RoundRobin).unwrap();
        assert!(form.is_positive_definite());
        assert!(report.holds);
        // The scanned grid contains the handpicked feasible form, so the
        // winner can only be at least as good.
        assert!(report.worst_margin <= -0.03);
    }

    #[test]
    fn figure_targets_list_all_reported_rows() {
        let targets = figure_targets();
        assert_eq!(targets.len(), 6);
        assert_eq!(
            targets
                .iter()
                .filter(|t| t.tag == ProtocolTag::RoundRobin)
                .count(),
            3
        );
        for t in &targets {
            assert!(t.h_mati > 0.0 && t.h_mad > 0.0 && t.h_mad < t.h_mati);
        }
    }

    #[test]
    fn constant_rate_run_keeps_the_schedule() {
        let p = ManipulatorParams::default();
        let (_, trace) = run_example(
            &p,
            ProtocolTag::TodTracking,
            0.0256,
            0.00385,
            0.5,
            [0.5, 0.5],
            FIG_X_RF0,
            5.0,
            1e20,
            1e-3,
        )
        .unwrap();
        assert!(trace.metrics.transmissions >= 18 && trace.metrics.transmissions <= 20);
        assert!(trace.metrics.sup_eta < 10.0);
        use crate::model::EventKind;
        assert_eq!(trace.events[0].kind, EventKind::Transmission);
        assert_abs_diff_eq!(trace.events[0].t, 0.0256, epsilon = 1e-9);
        assert_eq!(trace.events[1].kind, EventKind::Update);
        assert_abs_diff_eq!(trace.events[1].t, 0.0256 + 0.00385, epsilon = 1e-9);
    }

    #[test]
    fn reproduce_figures_writes_the_benchmark_outputs() {
        let dir = std::env::temp_dir().join(format!("arm-figs-{}", std::process::id()));
        let summary = reproduce_figures(&ManipulatorParams::default(), &dir).unwrap();
        for f in [
            "fig2.csv",
            "fig3.csv",
            "fig4.csv",
            "fig5.csv",
            "fig6.csv",
            "summary.json",
        ] {
            assert!(dir.join(f).exists(), "{f} missing");
        }
        assert_eq!(summary.tradeoff.len(), 2);
        for row in &summary.tradeoff {
            assert_eq!(row.h_mati, 0.0);
            assert!(row
                .diagnostics
                .iter()
                .any(|d| d.contains("interval condition fails at tau = 0")));
        }
        assert_eq!(summary.simulations.len(), 3);
        for row in &summary.simulations {
            assert!(
                row.metrics.sup_eta.is_finite() && row.metrics.sup_eta < 1.0e3,
                "{}: sup {}",
                row.figure,
                row.metrics.sup_eta
            );
        }
        let fig6 = &summary.simulations[2];
        assert!(
            fig6.metrics.sup_eta_last_window < 0.05 * fig6.metrics.sup_eta_first_window,
            "tracking run decays: last {} vs first {}",
            fig6.metrics.sup_eta_last_window,
            fig6.metrics.sup_eta_first_window
        );
        assert_abs_diff_eq!(summary.max_rho0, 2.0896, epsilon = 1e-3);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
