//! The networked and quantized closed loop as a hybrid system.
//!
//! A plant tracks a reference copy of itself. Sensors, the controller
//! output, and optionally the feedforward signal travel over a shared
//! network: one node transmits per slot, values are quantized, and each
//! packet arrives after a bounded delay. Between events the received
//! values are held (zero-order hold), so the loop state is the plant
//! tracking error plus the induced holding errors `e`, the quantizer
//! parameters `mu`, and in-flight payloads `m1, m2` that carry the post-
//! arrival values between a transmission and its arrival.
//!
//! Flow advances the continuous states and a timer; a transmission jump
//! freezes the payloads and flips the phase flag `b` to 1; the matching
//! update jump absorbs the payloads and flips `b` back. The module builds
//! the flow/jump maps and sets, samples admissible network schedules,
//! simulates, and checks a Lyapunov certificate along the result.

use crate::error::CoreError;
use crate::hybrid::{self, HybridArc, HybridSystemDef, Horizon, JumpPriority};
use crate::linalg::{norm, sub};
use crate::quantize::{quantize_node, QuantizerKind, QuantizerSpec, QuantizerState};
use crate::schedule::{self, NodeSignal, ProtocolKind};
use crate::tradeoff::{phi_value, GainTerms, TradeoffParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::rc::Rc;

/// Plant, controller, and feedforward maps of one tracking loop.
///
/// The reference system integrates the same plant field driven by the
/// feedforward signal alone. The controller may be dynamic or static; its
/// output map receives the held measurement so a static feedthrough law
/// needs no internal state. Output-map Jacobians feed the holding-error
/// flow; missing ones fall back to central finite differences when
/// enabled.
pub struct SystemDefinition {
    pub n_p: usize,
    pub n_c: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Plant field `(x_p, u) -> x_p'`.
    pub f_p: Box<dyn Fn(&[f64], &[f64]) -> Vec<f64>>,
    /// Plant output map `x_p -> y` (dimension `n_y`).
    pub g_p: Box<dyn Fn(&[f64]) -> Vec<f64>>,
    /// Jacobian of `g_p`, rows `n_y` by columns `n_p`.
    pub jac_g_p: Option<Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>>,
    /// Controller field `(x_c, y_hat) -> x_c'`.
    pub f_c: Box<dyn Fn(&[f64], &[f64]) -> Vec<f64>>,
    /// Controller output `(x_c, y_hat) -> u_ct` (dimension `n_u`).
    pub g_c: Box<dyn Fn(&[f64], &[f64]) -> Vec<f64>>,
    /// Jacobian of `g_c` in `x_c`, rows `n_u` by columns `n_c`.
    pub jac_g_c: Option<Box<dyn Fn(&[f64], &[f64]) -> Vec<Vec<f64>>>>,
    /// Feedforward signal and its time derivative.
    pub u_f: Box<dyn Fn(f64) -> Vec<f64>>,
    pub du_f: Box<dyn Fn(f64) -> Vec<f64>>,
    /// Permit central finite differences (relative step 1e-6) for missing
    /// Jacobians.
    pub allow_finite_difference: bool,
}

fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], rows: usize) -> Vec<Vec<f64>> {
    let mut jac = vec![vec![0.0; x.len()]; rows];
    let mut xp = x.to_vec();
    for col in 0..x.len() {
        let h = 1e-6 * x[col].abs().max(1.0);
        xp[col] = x[col] + h;
        let plus = f(&xp);
        xp[col] = x[col] - h;
        let minus = f(&xp);
        xp[col] = x[col];
        for row in 0..rows {
            jac[row][col] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    jac
}

/// How the next transmission interval is chosen.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum IntervalPolicy {
    Constant { h: f64 },
    Uniform,
}

/// How each transmission's delay is chosen.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelayPolicy {
    Constant { tau: f64 },
    Uniform,
}

/// Admissible-network description: interval and delay bounds plus the
/// sampling policies.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Minimum inter-transmission interval, > 0.
    pub eps_min: f64,
    /// Largest allowed transmission interval.
    pub h_mati: f64,
    /// Largest allowed delay, at most `h_mati`.
    pub h_mad: f64,
    /// Maximum consecutive dropouts; tightens the effective interval bound
    /// to `h_mati / (dropouts + 1)`.
    pub dropouts: u32,
    pub interval_policy: IntervalPolicy,
    pub delay_policy: DelayPolicy,
    pub seed: u64,
}

impl NetworkConfig {
    /// Interval bound after accounting for dropouts.
    pub fn effective_h_mati(&self) -> f64 {
        self.h_mati / (self.dropouts as f64 + 1.0)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.eps_min > 0.0) {
            return Err(CoreError::Configuration(
                "the minimum transmission interval must be positive".into(),
            ));
        }
        if !(self.h_mad >= 0.0 && self.h_mati >= self.h_mad) {
            return Err(CoreError::Configuration(
                "need h_mati >= h_mad >= 0".into(),
            ));
        }
        if self.eps_min > self.effective_h_mati() {
            return Err(CoreError::Configuration(format!(
                "minimum interval {} exceeds the effective transmission bound {}",
                self.eps_min,
                self.effective_h_mati()
            )));
        }
        if let IntervalPolicy::Constant { h } = self.interval_policy {
            if !(h >= self.eps_min && h <= self.effective_h_mati()) {
                return Err(CoreError::Configuration(format!(
                    "constant interval {h} outside [{}, {}]",
                    self.eps_min,
                    self.effective_h_mati()
                )));
            }
        }
        if let DelayPolicy::Constant { tau } = self.delay_policy {
            let cap = match self.interval_policy {
                IntervalPolicy::Constant { h } => self.h_mad.min(h),
                IntervalPolicy::Uniform => self.h_mad.min(self.eps_min),
            };
            if !(tau >= 0.0 && tau <= cap) {
                return Err(CoreError::Configuration(format!(
                    "constant delay {tau} outside [0, {cap}]"
                )));
            }
        }
        Ok(())
    }
}

/// A sampled transmission schedule: `intervals[i]` separates transmission
/// `i` from its predecessor (the origin for `i = 0`), `delays[i]` is the
/// in-flight time of transmission `i`. Each delay respects both the delay
/// bound and the following interval, so every arrival lands before the
/// next transmission.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub intervals: Vec<f64>,
    pub delays: Vec<f64>,
}

impl Schedule {
    /// Transmission instants with their delays: `(t_i, delay_i)`.
    pub fn transmissions(&self) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        self.intervals
            .iter()
            .zip(&self.delays)
            .map(|(&h, &d)| {
                t += h;
                (t, d)
            })
            .collect()
    }
}

/// Draws an admissible schedule of `count` transmissions.
///
/// Draw order is interval 0, then alternately the next interval and the
/// current delay, so extending `count` preserves the prefix for a fixed
/// seed. Each delay is capped by both the delay bound and the interval
/// that follows it.
pub fn sample_schedule(net: &NetworkConfig, count: usize) -> Result<Schedule, CoreError> {
    net.validate()?;
    if count == 0 {
        return Err(CoreError::InvalidArguments("schedule needs at least one entry".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(net.seed);
    let h_hi = net.effective_h_mati();
    let draw_interval = |rng: &mut ChaCha12Rng| match net.interval_policy {
        IntervalPolicy::Constant { h } => h,
        IntervalPolicy::Uniform => rng.gen_range(net.eps_min..=h_hi),
    };
    let mut intervals = Vec::with_capacity(count + 1);
    let mut delays = Vec::with_capacity(count);
    intervals.push(draw_interval(&mut rng));
    for i in 0..count {
        let next = draw_interval(&mut rng);
        intervals.push(next);
        let cap = net.h_mad.min(next);
        let delay = match net.delay_policy {
            DelayPolicy::Constant { tau } => tau.min(cap),
            DelayPolicy::Uniform => rng.gen_range(0.0..=cap),
        };
        delays.push(delay);
        let _ = i;
    }
    intervals.truncate(count);
    Ok(Schedule { intervals, delays })
}

/// Closed-loop state: continuous states, holding errors, quantizer
/// parameters, payloads, timer, counter, and phase flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NqcsState {
    /// Tracking error (plant state minus reference state).
    pub eta: Vec<f64>,
    pub x_c: Vec<f64>,
    pub x_rf: Vec<f64>,
    /// Holding errors stacked as (measurement, controller output,
    /// feedforward).
    pub e: Vec<f64>,
    /// Quantizer parameters, one per node, positive.
    pub mu: Vec<f64>,
    /// Error payload applied at the next arrival.
    pub m1: Vec<f64>,
    /// Parameter payload applied at the next arrival.
    pub m2: Vec<f64>,
    /// Running box-quantizer center estimates (zero for other kinds).
    pub z_hat: Vec<f64>,
    /// Time since the last transmission.
    pub tau: f64,
    /// Transmission counter.
    pub c: u64,
    /// 0 while waiting to transmit, 1 while a packet is in flight.
    pub b: u8,
}

/// Component offsets inside the flat state vector handed to the hybrid
/// runner. The tail carries absolute time and the current schedule targets
/// so the executable sets are state functions.
#[derive(Clone, Copy, Debug)]
struct Layout {
    n_p: usize,
    n_c: usize,
    n_y: usize,
    n_u: usize,
    n_f: usize,
    l: usize,
    eta: usize,
    x_c: usize,
    x_rf: usize,
    e: usize,
    mu: usize,
    m1: usize,
    m2: usize,
    z_hat: usize,
    tau: usize,
    c: usize,
    b: usize,
    t_abs: usize,
    h_next: usize,
    delay_next: usize,
    total: usize,
}

impl Layout {
    fn new(n_p: usize, n_c: usize, n_y: usize, n_u: usize, n_f: usize, l: usize) -> Self {
        let n_e = n_y + n_u + n_f;
        let eta = 0;
        let x_c = eta + n_p;
        let x_rf = x_c + n_c;
        let e = x_rf + n_p;
        let mu = e + n_e;
        let m1 = mu + l;
        let m2 = m1 + n_e;
        let z_hat = m2 + l;
        let tau = z_hat + n_e;
        let c = tau + 1;
        let b = c + 1;
        let t_abs = b + 1;
        let h_next = t_abs + 1;
        let delay_next = h_next + 1;
        Layout {
            n_p,
            n_c,
            n_y,
            n_u,
            n_f,
            l,
            eta,
            x_c,
            x_rf,
            e,
            mu,
            m1,
            m2,
            z_hat,
            tau,
            c,
            b,
            t_abs,
            h_next,
            delay_next,
            total: delay_next + 1,
        }
    }

    fn n_e(&self) -> usize {
        self.n_y + self.n_u + self.n_f
    }

    fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.total);
        let push_block = |prefix: &str, n: usize, names: &mut Vec<String>| {
            for i in 1..=n {
                names.push(format!("{prefix}{i}"));
            }
        };
        push_block("eta", self.n_p, &mut names);
        push_block("xc", self.n_c, &mut names);
        push_block("xrf", self.n_p, &mut names);
        push_block("e_df", self.n_y, &mut names);
        push_block("e_ct", self.n_u, &mut names);
        push_block("e_f", self.n_f, &mut names);
        push_block("mu", self.l, &mut names);
        push_block("m1_", self.n_e(), &mut names);
        push_block("m2_", self.l, &mut names);
        push_block("zhat", self.n_e(), &mut names);
        names.push("tau".into());
        names.push("c".into());
        names.push("b".into());
        names.push("t_abs".into());
        names.push("h_next".into());
        names.push("delay_next".into());
        names
    }
}

/// A state decoded from one flat trace record.
#[derive(Clone, Debug)]
pub struct DecodedState {
    pub state: NqcsState,
    pub t_abs: f64,
    pub h_next: f64,
    pub delay_next: f64,
}

/// One logged network event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Transmission,
    Update,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkEvent {
    pub kind: EventKind,
    pub t: f64,
    /// Node granted by the protocol (1-based); an update reports the node
    /// of the transmission it completes.
    pub granted: usize,
    /// Norm of the quantization error injected (transmission) or of the
    /// payload absorbed (update).
    pub magnitude: f64,
}

/// Norm summaries of a simulated trajectory.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub sup_eta: f64,
    /// Largest tracking-error norm over the first fifth of the horizon.
    pub sup_eta_first_window: f64,
    /// Largest tracking-error norm over the last fifth of the horizon.
    pub sup_eta_last_window: f64,
    pub final_eta_norm: f64,
    pub transmissions: u64,
    pub updates: u64,
}

/// Simulation output: the hybrid arc, the event log, and norm metrics.
#[derive(Clone, Debug)]
pub struct SimulationTrace {
    pub arc: HybridArc,
    pub events: Vec<NetworkEvent>,
    pub metrics: TraceMetrics,
}

/// The assembled closed loop.
pub struct NqcsModel {
    pub system: SystemDefinition,
    pub quant: QuantizerSpec,
    pub protocol: ProtocolKind,
    pub net: NetworkConfig,
    layout: Layout,
}

/// Validates cross-module dimensions and builds the closed loop.
///
/// The protocol's measurement slices must cover the plant output, its
/// controller-output slices the input, and its feedforward slices either
/// nothing (feedforward delivered directly) or a copy of the input; the
/// quantizer's node dimensions must match the protocol blocks. A missing
/// output-map Jacobian is rejected here unless finite differencing is
/// enabled.
pub fn assemble(
    system: SystemDefinition,
    quant: QuantizerSpec,
    protocol: ProtocolKind,
    net: NetworkConfig,
) -> Result<NqcsModel, CoreError> {
    protocol.validate()?;
    quant.validate()?;
    net.validate()?;
    if quant.dims != protocol.node_dims() {
        return Err(CoreError::Configuration(format!(
            "quantizer node dimensions {:?} do not match protocol blocks {:?}",
            quant.dims,
            protocol.node_dims()
        )));
    }
    let n_f = protocol.f_dim();
    let mut n_y = 0;
    let mut n_ct = 0;
    for node in &protocol.nodes {
        match node {
            NodeSignal::Measurement { df } => n_y += df.len(),
            NodeSignal::Actuation { ct, .. } => n_ct += ct.len(),
        }
    }
    if n_y != system.n_y || n_ct != system.n_u {
        return Err(CoreError::Configuration(format!(
            "protocol covers {n_y} measurements and {n_ct} controller outputs; \
             the system has {} and {}",
            system.n_y, system.n_u
        )));
    }
    if n_f != 0 && n_f != system.n_u {
        return Err(CoreError::Configuration(format!(
            "feedforward slices must be absent or cover all {} inputs, got {n_f}",
            system.n_u
        )));
    }
    if system.jac_g_p.is_none() && !system.allow_finite_difference {
        return Err(CoreError::Configuration(
            "plant output Jacobian missing and finite differencing disabled".into(),
        ));
    }
    if system.n_c > 0 && system.jac_g_c.is_none() && !system.allow_finite_difference {
        return Err(CoreError::Configuration(
            "controller output Jacobian missing and finite differencing disabled".into(),
        ));
    }
    let layout = Layout::new(system.n_p, system.n_c, system.n_y, system.n_u, n_f, quant.num_nodes());
    Ok(NqcsModel {
        system,
        quant,
        protocol,
        net,
        layout,
    })
}

/// Continuous-time derivatives of the physical states and holding errors.
#[derive(Clone, Debug)]
pub struct FlowParts {
    pub f_eta: Vec<f64>,
    pub f_ct: Vec<f64>,
    pub f_rf: Vec<f64>,
    pub e_dot: Vec<f64>,
}

impl NqcsModel {
    pub fn state_names(&self) -> Vec<String> {
        self.layout.names()
    }

    /// A fresh initial state: zero errors and payloads, waiting phase.
    pub fn initial_state(&self, eta: Vec<f64>, x_c: Vec<f64>, x_rf: Vec<f64>, mu: Vec<f64>)
        -> Result<NqcsState, CoreError>
    {
        let lay = &self.layout;
        let state = NqcsState {
            eta,
            x_c,
            x_rf,
            e: vec![0.0; lay.n_e()],
            mu,
            m1: vec![0.0; lay.n_e()],
            m2: vec![0.0; lay.l],
            z_hat: vec![0.0; lay.n_e()],
            tau: 0.0,
            c: 0,
            b: 0,
        };
        self.check_state(&state)?;
        Ok(state)
    }

    fn check_state(&self, s: &NqcsState) -> Result<(), CoreError> {
        let lay = &self.layout;
        if s.eta.len() != lay.n_p
            || s.x_c.len() != lay.n_c
            || s.x_rf.len() != lay.n_p
            || s.e.len() != lay.n_e()
            || s.mu.len() != lay.l
            || s.m1.len() != lay.n_e()
            || s.m2.len() != lay.l
            || s.z_hat.len() != lay.n_e()
        {
            return Err(CoreError::InvalidArguments(
                "state component dimensions do not match the model".into(),
            ));
        }
        if s.b > 1 {
            return Err(CoreError::InvalidArguments(format!(
                "phase flag must be 0 or 1, got {}",
                s.b
            )));
        }
        if s.mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(CoreError::InvalidArguments(
                "quantizer parameters must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    fn encode(&self, s: &NqcsState, t_abs: f64, h_next: f64, delay_next: f64) -> Vec<f64> {
        let lay = &self.layout;
        let mut x = Vec::with_capacity(lay.total);
        x.extend_from_slice(&s.eta);
        x.extend_from_slice(&s.x_c);
        x.extend_from_slice(&s.x_rf);
        x.extend_from_slice(&s.e);
        x.extend_from_slice(&s.mu);
        x.extend_from_slice(&s.m1);
        x.extend_from_slice(&s.m2);
        x.extend_from_slice(&s.z_hat);
        x.push(s.tau);
        x.push(s.c as f64);
        x.push(s.b as f64);
        x.push(t_abs);
        x.push(h_next);
        x.push(delay_next);
        x
    }

    /// Decodes one flat record back into named components.
    pub fn decode(&self, x: &[f64]) -> DecodedState {
        let lay = &self.layout;
        DecodedState {
            state: NqcsState {
                eta: x[lay.eta..lay.eta + lay.n_p].to_vec(),
                x_c: x[lay.x_c..lay.x_c + lay.n_c].to_vec(),
                x_rf: x[lay.x_rf..lay.x_rf + lay.n_p].to_vec(),
                e: x[lay.e..lay.e + lay.n_e()].to_vec(),
                mu: x[lay.mu..lay.mu + lay.l].to_vec(),
                m1: x[lay.m1..lay.m1 + lay.n_e()].to_vec(),
                m2: x[lay.m2..lay.m2 + lay.l].to_vec(),
                z_hat: x[lay.z_hat..lay.z_hat + lay.n_e()].to_vec(),
                tau: x[lay.tau],
                c: x[lay.c] as u64,
                b: x[lay.b] as u8,
            },
            t_abs: x[lay.t_abs],
            h_next: x[lay.h_next],
            delay_next: x[lay.delay_next],
        }
    }

    /// Received measurement: true output difference plus its holding error.
    fn y_hat(&self, eta: &[f64], x_rf: &[f64], e: &[f64]) -> Vec<f64> {
        let x_p: Vec<f64> = eta.iter().zip(x_rf).map(|(a, b)| a + b).collect();
        let y_df = sub(&(self.system.g_p)(&x_p), &(self.system.g_p)(x_rf));
        y_df.iter().zip(&e[..self.layout.n_y]).map(|(y, ed)| y + ed).collect()
    }

    fn jac_g_p_at(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match &self.system.jac_g_p {
            Some(j) => j(x),
            None => fd_jacobian(|z| (self.system.g_p)(z), x, self.system.n_y),
        }
    }

    /// Flow derivatives of the continuous components at one state.
    pub fn flow_parts(&self, s: &NqcsState, t: f64) -> Result<FlowParts, CoreError> {
        self.check_state(s)?;
        Ok(self.flow_parts_unchecked(s, t))
    }

    fn flow_parts_unchecked(&self, s: &NqcsState, t: f64) -> FlowParts {
        let sys = &self.system;
        let lay = &self.layout;
        let x_p: Vec<f64> = s.eta.iter().zip(&s.x_rf).map(|(a, b)| a + b).collect();
        let u_f = (sys.u_f)(t);
        let e_ct = &s.e[lay.n_y..lay.n_y + lay.n_u];
        let e_f: Vec<f64> = if lay.n_f > 0 {
            s.e[lay.n_y + lay.n_u..].to_vec()
        } else {
            vec![0.0; lay.n_u]
        };
        let y_hat = self.y_hat(&s.eta, &s.x_rf, &s.e);
        let u_ct = (sys.g_c)(&s.x_c, &y_hat);

        // Plant input holds the received controller output and feedforward;
        // the reference system receives the held feedforward alone.
        let u_plant: Vec<f64> = (0..lay.n_u)
            .map(|i| u_ct[i] + e_ct[i] + u_f[i] + e_f[i])
            .collect();
        let u_ref: Vec<f64> = (0..lay.n_u).map(|i| u_f[i] + e_f[i]).collect();

        let f_rf = (sys.f_p)(&s.x_rf, &u_ref);
        let f_eta = sub(&(sys.f_p)(&x_p, &u_plant), &f_rf);
        let f_ct = (sys.f_c)(&s.x_c, &y_hat);

        // Holding errors drift opposite the signals they freeze: the
        // received values stay constant between arrivals.
        let x_p_dot: Vec<f64> = f_eta.iter().zip(&f_rf).map(|(a, b)| a + b).collect();
        let jac_p = self.jac_g_p_at(&x_p);
        let jac_rf = self.jac_g_p_at(&s.x_rf);
        let mut e_dot = vec![0.0; lay.n_e()];
        for row in 0..lay.n_y {
            let mut ydot = 0.0;
            for col in 0..lay.n_p {
                ydot += jac_p[row][col] * x_p_dot[col] - jac_rf[row][col] * f_rf[col];
            }
            e_dot[row] = -ydot;
        }
        if lay.n_c > 0 {
            let jac_c = match &sys.jac_g_c {
                Some(j) => j(&s.x_c, &y_hat),
                None => fd_jacobian(|z| (sys.g_c)(z, &y_hat), &s.x_c, lay.n_u),
            };
            for row in 0..lay.n_u {
                let mut udot = 0.0;
                for col in 0..lay.n_c {
                    udot += jac_c[row][col] * f_ct[col];
                }
                e_dot[lay.n_y + row] = -udot;
            }
        }
        if lay.n_f > 0 {
            let du = (sys.du_f)(t);
            for i in 0..lay.n_f {
                e_dot[lay.n_y + lay.n_u + i] = -du[i];
            }
        }
        FlowParts {
            f_eta,
            f_ct,
            f_rf,
            e_dot,
        }
    }

    fn flow_flat(&self, x: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let dec = self.decode(x);
        let parts = self.flow_parts_unchecked(&dec.state, dec.t_abs);
        let mut dx = vec![0.0; lay.total];
        dx[lay.eta..lay.eta + lay.n_p].copy_from_slice(&parts.f_eta);
        dx[lay.x_c..lay.x_c + lay.n_c].copy_from_slice(&parts.f_ct);
        dx[lay.x_rf..lay.x_rf + lay.n_p].copy_from_slice(&parts.f_rf);
        dx[lay.e..lay.e + lay.n_e()].copy_from_slice(&parts.e_dot);
        // Quantizer parameters, payloads, counter, and phase hold constant
        // during flow; the timer and absolute clock advance at unit rate.
        dx[lay.tau] = 1.0;
        dx[lay.t_abs] = 1.0;
        dx
    }

    /// Flow-set membership (the formal definition, independent of the
    /// sampled schedule).
    pub fn in_flow_set(&self, s: &NqcsState) -> bool {
        if s.b == 0 {
            s.tau >= 0.0 && s.tau <= self.net.h_mati
        } else {
            s.tau >= 0.0 && s.tau <= self.net.h_mad
        }
    }

    /// Jump-set membership: transmissions need the minimum interval to
    /// have elapsed, arrivals can occur any time within the delay bound.
    pub fn in_jump_set(&self, s: &NqcsState) -> bool {
        if s.b == 0 {
            s.tau >= self.net.eps_min && s.tau <= self.net.h_mati
        } else {
            s.tau >= 0.0 && s.tau <= self.net.h_mad
        }
    }

    /// The signal the given node would transmit now.
    fn node_signal(&self, node: usize, s: &NqcsState, t: f64) -> Vec<f64> {
        let lay = &self.layout;
        match &self.protocol.nodes[node - 1] {
            NodeSignal::Measurement { df } => {
                let x_p: Vec<f64> = s.eta.iter().zip(&s.x_rf).map(|(a, b)| a + b).collect();
                let y_df = sub(&(self.system.g_p)(&x_p), &(self.system.g_p)(&s.x_rf));
                df.clone().map(|i| y_df[i]).collect()
            }
            NodeSignal::Actuation { ct, f } => {
                let y_hat = self.y_hat(&s.eta, &s.x_rf, &s.e);
                let u_ct = (self.system.g_c)(&s.x_c, &y_hat);
                let u_f = (self.system.u_f)(t);
                let mut z: Vec<f64> = ct.clone().map(|i| u_ct[i - lay.n_y]).collect();
                z.extend(f.clone().map(|i| u_f[i - lay.n_y - lay.n_u]));
                z
            }
        }
    }

    /// Transmission jump: quantizes the granted node's signal, freezes the
    /// post-arrival error and parameter values into the payloads, resets
    /// the timer, and marks a packet in flight. The physical state, the
    /// holding errors, and the parameters themselves are untouched.
    pub fn transmission_jump(
        &self,
        s: &NqcsState,
        t: f64,
    ) -> Result<(NqcsState, NetworkEvent), CoreError> {
        self.check_state(s)?;
        if s.b != 0 {
            return Err(CoreError::WrongPhase(
                "transmission jump requires the waiting phase (b = 0)".into(),
            ));
        }
        let lay = &self.layout;
        let granted = schedule::grant(&self.protocol, s.c, &s.e, None)?;
        let z = self.node_signal(granted, s, t);
        let qstate = QuantizerState {
            mu: s.mu.clone(),
            z_hat: match self.quant.kind {
                QuantizerKind::Box => s.z_hat.clone(),
                _ => Vec::new(),
            },
        };
        let out = quantize_node(&self.quant, &qstate, granted - 1, &z).map_err(|err| {
            match err {
                // Rewrite to the protocol's 1-based node numbering and stamp
                // the absolute time.
                CoreError::Saturation {
                    node,
                    magnitude,
                    bound,
                    ..
                } => CoreError::Saturation {
                    node: node + 1,
                    magnitude,
                    bound,
                    t: Some(t),
                },
                other => other,
            }
        })?;

        let mut eps_full = vec![0.0; lay.n_e()];
        let node_idx = self.protocol.node_indices(granted);
        for (k, &i) in node_idx.iter().enumerate() {
            eps_full[i] = out.eps[k];
        }
        let h_e = schedule::protocol_update(&self.protocol, s.c, &s.e, &eps_full)?;
        let h_mu = schedule::h_mu(&self.protocol, &self.quant, &qstate, granted).mu;

        let mut next = s.clone();
        next.m1 = sub(&h_e, &s.e);
        next.m2 = sub(&h_mu, &s.mu);
        if self.quant.kind == QuantizerKind::Box {
            // The decoder learns the sub-box center immediately; it becomes
            // the next center estimate for this node.
            for (k, &i) in node_idx.iter().enumerate() {
                next.z_hat[i] = out.q[k];
            }
        }
        next.tau = 0.0;
        next.c = s.c + 1;
        next.b = 1;
        let event = NetworkEvent {
            kind: EventKind::Transmission,
            t,
            granted,
            magnitude: norm(&out.eps),
        };
        Ok((next, event))
    }

    /// Arrival jump: absorbs the payloads into the errors and parameters
    /// and rearms them to undo the absorption, preserving the timer and
    /// counter.
    pub fn update_jump(&self, s: &NqcsState) -> Result<NqcsState, CoreError> {
        self.check_state(s)?;
        if s.b != 1 {
            return Err(CoreError::WrongPhase(
                "update jump requires a packet in flight (b = 1)".into(),
            ));
        }
        let mut next = s.clone();
        next.e = s.e.iter().zip(&s.m1).map(|(a, b)| a + b).collect();
        next.mu = s.mu.iter().zip(&s.m2).map(|(a, b)| a + b).collect();
        next.m1 = next.e.iter().map(|v| -v).collect();
        next.m2 = next.mu.iter().map(|v| -v).collect();
        next.b = 0;
        Ok(next)
    }

    /// Simulates the closed loop under a freshly sampled schedule.
    ///
    /// Jumps take priority where sets overlap, so transmissions fire
    /// exactly when the timer reaches the scheduled interval. The run is
    /// deterministic for a fixed configuration and seed.
    pub fn simulate(
        &self,
        s0: &NqcsState,
        horizon: Horizon,
        step: f64,
    ) -> Result<SimulationTrace, CoreError> {
        self.check_state(s0)?;
        if !self.in_flow_set(s0) && !self.in_jump_set(s0) {
            return Err(CoreError::InvalidInitialState);
        }
        let count = (horizon.t_max / self.net.eps_min).ceil() as usize + 3;
        let sched = sample_schedule(&self.net, count)?;
        let events: Rc<RefCell<Vec<NetworkEvent>>> = Rc::new(RefCell::new(Vec::new()));
        let last_granted = Rc::new(RefCell::new(0_usize));

        let lay = self.layout;
        let x0 = self.encode(
            s0,
            0.0,
            sched.intervals[0],
            if s0.b == 1 { self.net.h_mad } else { 0.0 },
        );

        let ev = Rc::clone(&events);
        let lg = Rc::clone(&last_granted);
        let jump_map = move |x: &[f64]| -> Result<Vec<f64>, CoreError> {
            let dec = self.decode(x);
            if dec.state.b == 0 {
                let idx = dec.state.c as usize;
                if idx >= sched.delays.len() {
                    return Err(CoreError::InvalidArguments(
                        "transmission schedule exhausted".into(),
                    ));
                }
                let (next, event) = self.transmission_jump(&dec.state, dec.t_abs)?;
                *lg.borrow_mut() = event.granted;
                ev.borrow_mut().push(event);
                Ok(self.encode(&next, dec.t_abs, dec.h_next, sched.delays[idx]))
            } else {
                let next = self.update_jump(&dec.state)?;
                let idx = next.c as usize;
                if idx >= sched.intervals.len() {
                    return Err(CoreError::InvalidArguments(
                        "transmission schedule exhausted".into(),
                    ));
                }
                ev.borrow_mut().push(NetworkEvent {
                    kind: EventKind::Update,
                    t: dec.t_abs,
                    granted: *lg.borrow(),
                    magnitude: norm(&dec.state.m1),
                });
                Ok(self.encode(&next, dec.t_abs, sched.intervals[idx], dec.delay_next))
            }
        };

        let sys = HybridSystemDef {
            flow_map: Box::new(move |x: &[f64]| self.flow_flat(x)),
            jump_map: Box::new(jump_map),
            // Executable sets: flow until the scheduled interval or delay
            // elapses, jump exactly from there. The formal set membership
            // is wider and is checked separately in tests.
            flow_set: Box::new(move |x: &[f64]| {
                let target = if x[lay.b] == 0.0 { x[lay.h_next] } else { x[lay.delay_next] };
                x[lay.tau] <= target
            }),
            jump_set: Box::new(move |x: &[f64]| {
                let target = if x[lay.b] == 0.0 { x[lay.h_next] } else { x[lay.delay_next] };
                x[lay.tau] >= target
            }),
            component_names: self.state_names(),
        };

        let arc = hybrid::run_hybrid(&sys, &x0, horizon, step, JumpPriority::JumpFirst)?;
        drop(sys);
        let events = Rc::try_unwrap(events)
            .map(RefCell::into_inner)
            .unwrap_or_else(|rc| rc.borrow().clone());
        let metrics = self.metrics(&arc, &events);
        Ok(SimulationTrace {
            arc,
            events,
            metrics,
        })
    }

    fn metrics(&self, arc: &HybridArc, events: &[NetworkEvent]) -> TraceMetrics {
        let lay = &self.layout;
        let t_end = arc.last().0.t;
        let mut sup = 0.0_f64;
        let mut first = 0.0_f64;
        let mut last = 0.0_f64;
        for (ht, x) in &arc.records {
            let n = norm(&x[lay.eta..lay.eta + lay.n_p]);
            sup = sup.max(n);
            if ht.t <= 0.2 * t_end {
                first = first.max(n);
            }
            if ht.t >= 0.8 * t_end {
                last = last.max(n);
            }
        }
        let final_eta = norm(&arc.last().1[lay.eta..lay.eta + lay.n_p]);
        TraceMetrics {
            sup_eta: sup,
            sup_eta_first_window: first,
            sup_eta_last_window: last,
            final_eta_norm: final_eta,
            transmissions: events.iter().filter(|e| e.kind == EventKind::Transmission).count()
                as u64,
            updates: events.iter().filter(|e| e.kind == EventKind::Update).count() as u64,
        }
    }
}

/// Integrates the network-free closed loop (no holding errors, no
/// quantization, feedforward applied directly), sampling the stacked
/// state `(eta, x_c, x_rf)` on the fixed grid.
pub fn simulate_ideal(
    system: &SystemDefinition,
    eta0: &[f64],
    x_c0: &[f64],
    x_rf0: &[f64],
    t_max: f64,
    step: f64,
) -> Result<Vec<(f64, Vec<f64>)>, CoreError> {
    if eta0.len() != system.n_p || x_rf0.len() != system.n_p || x_c0.len() != system.n_c {
        return Err(CoreError::InvalidArguments(
            "initial state dimensions do not match the system".into(),
        ));
    }
    let n_p = system.n_p;
    let n_c = system.n_c;
    // Stacked state with absolute time as the last component.
    let flow = |x: &[f64]| -> Vec<f64> {
        let eta = &x[..n_p];
        let x_c = &x[n_p..n_p + n_c];
        let x_rf = &x[n_p + n_c..n_p + n_c + n_p];
        let t = x[n_p + n_c + n_p];
        let x_p: Vec<f64> = eta.iter().zip(x_rf).map(|(a, b)| a + b).collect();
        let y_df = sub(&(system.g_p)(&x_p), &(system.g_p)(x_rf));
        let u_ct = (system.g_c)(x_c, &y_df);
        let u_f = (system.u_f)(t);
        let u_plant: Vec<f64> = u_ct.iter().zip(&u_f).map(|(a, b)| a + b).collect();
        let f_rf = (system.f_p)(x_rf, &u_f);
        let f_eta = sub(&(system.f_p)(&x_p, &u_plant), &f_rf);
        let f_ct = (system.f_c)(x_c, &y_df);
        let mut dx = Vec::with_capacity(x.len());
        dx.extend_from_slice(&f_eta);
        dx.extend_from_slice(&f_ct);
        dx.extend_from_slice(&f_rf);
        dx.push(1.0);
        dx
    };
    let mut x0 = Vec::with_capacity(2 * n_p + n_c + 1);
    x0.extend_from_slice(eta0);
    x0.extend_from_slice(x_c0);
    x0.extend_from_slice(x_rf0);
    x0.push(0.0);
    let samples = hybrid::integrate_flow(&x0, &flow, 0.0, t_max, step)?;
    Ok(samples
        .into_iter()
        .map(|(t, mut x)| {
            x.pop();
            (t, x)
        })
        .collect())
}

/// Per-check outcome of a trajectory certification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyReport {
    pub records: usize,
    pub flow_segments: usize,
    pub jumps: usize,
    /// Worst `U(end) - bound` over flow segments (negative is margin).
    pub flow_worst_margin: f64,
    /// Worst `U(post) - U(pre) - alpha3(|e_f|)` over jumps.
    pub jump_worst_margin: f64,
    /// Worst `U(t) - envelope(t)` over all records.
    pub envelope_worst_margin: f64,
    pub flow_passing: bool,
    pub jump_passing: bool,
    pub envelope_passing: bool,
    /// Jump and envelope checks together.
    pub passing: bool,
    /// Largest feedforward-error norm seen along the trace.
    pub sup_e_f: f64,
    pub u_initial: f64,
    pub u_final: f64,
}

const CERT_SLACK: f64 = 1e-10;

/// Checks the Lyapunov certificate `U = V(eta) + gamma_b phi_b(tau) W^2`
/// along a simulated trace.
///
/// Per flow segment, `U` must track the decay/offset envelope driven by
/// the feedforward error; per jump, `U` must not increase beyond the
/// feedforward jump gain; end to end, `U` must stay under the exponential
/// envelope with the accumulated offset. The flow check is reported, the
/// jump and envelope checks gate `passing`.
pub fn certify(
    model: &NqcsModel,
    trace: &SimulationTrace,
    v: &dyn Fn(&[f64]) -> f64,
    varpi: f64,
    params: &TradeoffParams,
    gains: &GainTerms,
) -> Result<CertifyReport, CoreError> {
    params.validate()?;
    gains.validate()?;
    let cap = gains.eps_tilde_cap(params);
    if !(gains.eps_tilde > 0.0 && gains.eps_tilde < cap) {
        return Err(CoreError::InvalidArguments(format!(
            "eps_tilde = {} outside the admissible interval (0, {cap})",
            gains.eps_tilde
        )));
    }
    let records = &trace.arc.records;
    if records.is_empty() {
        return Err(CoreError::InvalidArguments("empty trace".into()));
    }
    let lay = &model.layout;
    let n_f_start = lay.n_y + lay.n_u;

    let mut u_vals = Vec::with_capacity(records.len());
    let mut ef_vals = Vec::with_capacity(records.len());
    for (_, x) in records {
        let dec = model.decode(x);
        let s = &dec.state;
        let phi = phi_value(params, s.b, s.tau)?;
        if phi < 0.0 {
            return Err(CoreError::CertificationDomain(format!(
                "comparison curve is negative at tau = {} in phase {}",
                s.tau, s.b
            )));
        }
        let gamma = if s.b == 0 { params.gamma0 } else { params.gamma1 };
        let w = schedule::composite_w(
            &model.protocol,
            &model.quant,
            varpi,
            &s.e,
            &s.mu,
            &s.m1,
            &s.m2,
            s.c,
            s.b,
        )?;
        u_vals.push(v(&s.eta) + gamma * phi * w * w);
        ef_vals.push(norm(&s.e[n_f_start..]));
    }
    let sup_ef = ef_vals.iter().cloned().fold(0.0_f64, f64::max);

    // Jump records share their flow-time with the preceding record; marks
    // partition the trace into flow segments.
    let marks = &trace.arc.jump_marks;
    let mut jump_worst = f64::NEG_INFINITY;
    for &m in marks {
        let pre = u_vals[m - 1];
        let post = u_vals[m];
        let offset = gains.alpha3.eval(ef_vals[m - 1]);
        jump_worst = jump_worst.max(post - pre - offset);
    }

    let mut flow_worst = f64::NEG_INFINITY;
    let mut segments = 0_usize;
    let mut seg_start = 0_usize;
    let mut boundaries: Vec<usize> = marks.clone();
    boundaries.push(records.len());
    for &end in &boundaries {
        if end - seg_start >= 2 {
            segments += 1;
            let t0 = records[seg_start].0.t;
            let t1 = records[end - 1].0.t;
            let v_seg = ef_vals[seg_start..end].iter().cloned().fold(0.0_f64, f64::max);
            let decay = (-gains.eps_tilde * (t1 - t0)).exp();
            let bound = decay * u_vals[seg_start]
                + (1.0 - decay) * gains.sigma1.eval(v_seg) / gains.eps_tilde;
            flow_worst = flow_worst.max(u_vals[end - 1] - bound);
        }
        seg_start = end;
    }

    let u0 = u_vals[0];
    let t0 = records[0].0.t;
    let offset = (gains.sigma1.eval(sup_ef) / gains.eps_tilde + gains.alpha3.eval(sup_ef))
        / (1.0 - (-gains.eps_min * gains.eps_tilde).exp());
    let mut env_worst = f64::NEG_INFINITY;
    for (k, (ht, _)) in records.iter().enumerate() {
        let bound = (-gains.eps_tilde * (ht.t - t0)).exp() * u0 + offset;
        env_worst = env_worst.max(u_vals[k] - bound);
    }

    let scale = u0.abs().max(1.0);
    let jump_passing = jump_worst <= CERT_SLACK * scale;
    let flow_passing = flow_worst <= CERT_SLACK * scale;
    let envelope_passing = env_worst <= CERT_SLACK * scale;
    Ok(CertifyReport {
        records: records.len(),
        flow_segments: segments,
        jumps: marks.len(),
        flow_worst_margin: flow_worst,
        jump_worst_margin: jump_worst,
        envelope_worst_margin: env_worst,
        flow_passing,
        jump_passing,
        envelope_passing,
        passing: jump_passing && envelope_passing,
        sup_e_f: sup_ef,
        u_initial: u0,
        u_final: *u_vals.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::QuantizerSpec;
    use crate::schedule::ProtocolTag;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Scalar plant x' = -x + u with identity output, static controller
    /// u = -y_hat, constant feedforward.
    fn scalar_system() -> SystemDefinition {
        SystemDefinition {
            n_p: 1,
            n_c: 0,
            n_u: 1,
            n_y: 1,
            f_p: Box::new(|x, u| vec![-x[0] + u[0]]),
            g_p: Box::new(|x| x.to_vec()),
            jac_g_p: Some(Box::new(|_| vec![vec![1.0]])),
            f_c: Box::new(|_, _| Vec::new()),
            g_c: Box::new(|_, y| vec![-y[0]]),
            jac_g_c: None,
            u_f: Box::new(|_| vec![0.5]),
            du_f: Box::new(|_| vec![0.0]),
            allow_finite_difference: false,
        }
    }

    fn scalar_protocol(networked_feedforward: bool, tag: ProtocolTag) -> ProtocolKind {
        let nodes = if networked_feedforward {
            vec![
                NodeSignal::Measurement { df: 0..1 },
                NodeSignal::Actuation { ct: 1..2, f: 2..3 },
            ]
        } else {
            vec![
                NodeSignal::Measurement { df: 0..1 },
                NodeSignal::Actuation { ct: 1..2, f: 2..2 },
            ]
        };
        ProtocolKind::new(tag, nodes)
    }

    fn scalar_net(h: f64, tau: f64) -> NetworkConfig {
        NetworkConfig {
            eps_min: 1e-3,
            h_mati: 0.1,
            h_mad: 0.05,
            dropouts: 0,
            interval_policy: IntervalPolicy::Constant { h },
            delay_policy: DelayPolicy::Constant { tau },
            seed: 7,
        }
    }

    fn scalar_model(networked_feedforward: bool) -> NqcsModel {
        let dims: Vec<usize> = if networked_feedforward { vec![1, 2] } else { vec![1, 1] };
        assemble(
            scalar_system(),
            QuantizerSpec::zoom(&dims, 0.8, 400.0, 0.6),
            scalar_protocol(networked_feedforward, ProtocolTag::RoundRobin),
            scalar_net(0.05, 0.01),
        )
        .unwrap()
    }

    #[test]
    fn assemble_rejects_mismatched_quantizer() {
        let err = assemble(
            scalar_system(),
            QuantizerSpec::zoom(&[1, 1], 0.8, 4.0, 0.6),
            scalar_protocol(true, ProtocolTag::RoundRobin),
            scalar_net(0.05, 0.01),
        );
        assert!(matches!(err, Err(CoreError::Configuration(_))));
    }

    #[test]
    fn assemble_requires_jacobian_or_fd() {
        let mut sys = scalar_system();
        sys.jac_g_p = None;
        sys.allow_finite_difference = false;
        let err = assemble(
            sys,
            QuantizerSpec::zoom(&[1, 1], 0.8, 4.0, 0.6),
            scalar_protocol(false, ProtocolTag::RoundRobin),
            scalar_net(0.05, 0.01),
        );
        assert!(matches!(err, Err(CoreError::Configuration(_))));
    }

    #[test]
    fn exact_tracking_is_an_equilibrium() {
        let model = scalar_model(true);
        let s = model
            .initial_state(vec![0.0], vec![], vec![0.3], vec![1.0, 1.0])
            .unwrap();
        let parts = model.flow_parts(&s, 0.2).unwrap();
        assert_abs_diff_eq!(parts.f_eta[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reference_flow_ignores_tracking_error() {
        let model = scalar_model(true);
        let mut s = model
            .initial_state(vec![0.4], vec![], vec![0.3], vec![1.0, 1.0])
            .unwrap();
        let f_rf_a = model.flow_parts(&s, 0.1).unwrap().f_rf;
        s.eta[0] = -2.0;
        let f_rf_b = model.flow_parts(&s, 0.1).unwrap().f_rf;
        assert_eq!(f_rf_a, f_rf_b);
    }

    #[test]
    fn measurement_error_flow_freezes_received_output() {
        // e_df' must equal the negative time-derivative of y_df, so the
        // received y_df + e_df is constant; compare against a central
        // difference along the actual flow.
        let model = scalar_model(true);
        let s = model
            .initial_state(vec![0.4], vec![], vec![0.3], vec![1.0, 1.0])
            .unwrap();
        let x0 = model.encode(&s, 0.0, 1.0, 0.0);
        let flow = |x: &[f64]| model.flow_flat(x);
        let h = 1e-5;
        let run = hybrid::integrate_flow(&x0, &flow, 0.0, 2.0 * h, h).unwrap();
        let y_df_at = |x: &[f64]| {
            let dec = model.decode(x);
            let x_p = dec.state.eta[0] + dec.state.x_rf[0];
            x_p - dec.state.x_rf[0]
        };
        let dy = (y_df_at(&run[2].1) - y_df_at(&run[0].1)) / (2.0 * h);
        let parts = model.flow_parts(&model.decode(&run[1].1).state, h).unwrap();
        assert_relative_eq!(parts.e_dot[0], -dy, max_relative = 1e-6);
    }

    #[test]
    fn transmission_jump_freezes_payloads() {
        let model = scalar_model(true);
        let mut s = model
            .initial_state(vec![0.4], vec![], vec![0.3], vec![1.0, 1.0])
            .unwrap();
        s.e = vec![0.2, -0.1, 0.05];
        s.tau = 0.05;
        let (next, event) = model.transmission_jump(&s, 0.0).unwrap();
        assert_eq!(event.kind, EventKind::Transmission);
        assert_eq!(event.granted, 1);
        // Physical state, errors, parameters unchanged; bookkeeping reset.
        assert_eq!(next.eta, s.eta);
        assert_eq!(next.e, s.e);
        assert_eq!(next.mu, s.mu);
        assert_eq!(next.tau, 0.0);
        assert_eq!(next.c, s.c + 1);
        assert_eq!(next.b, 1);
        // Granted node 1 (measurement): payload swaps its error for the
        // quantization error; the other blocks keep their holding error.
        let y_df = 0.4;
        let eps = {
            let qs = QuantizerState::new(&model.quant, &s.mu).unwrap();
            quantize_node(&model.quant, &qs, 0, &[y_df]).unwrap().eps[0]
        };
        assert_relative_eq!(next.m1[0], eps - s.e[0], max_relative = 1e-12);
        assert_eq!(&next.m1[1..], &[0.0, 0.0]);
        // All zoom nodes shrink at the arrival.
        assert_relative_eq!(next.m2[0], 0.6 - 1.0, max_relative = 1e-12);
        assert_relative_eq!(next.m2[1], 0.6 - 1.0, max_relative = 1e-12);
    }

    #[test]
    fn jumps_reject_wrong_phase() {
        let model = scalar_model(true);
        let mut s = model
            .initial_state(vec![0.1], vec![], vec![0.0], vec![1.0, 1.0])
            .unwrap();
        assert!(matches!(
            model.update_jump(&s),
            Err(CoreError::WrongPhase(_))
        ));
        s.b = 1;
        assert!(matches!(
            model.transmission_jump(&s, 0.0),
            Err(CoreError::WrongPhase(_))
        ));
    }

    #[test]
    fn update_jump_absorbs_and_rearms() {
        let model = scalar_model(true);
        let mut s = model
            .initial_state(vec![0.4], vec![], vec![0.3], vec![1.0, 1.0])
            .unwrap();
        s.e = vec![0.2, -0.1, 0.05];
        s.b = 1;
        s.tau = 0.007;
        s.m1 = vec![-0.15, 0.1, -0.05];
        s.m2 = vec![-0.4, -0.4];
        let next = model.update_jump(&s).unwrap();
        assert_eq!(next.b, 0);
        assert_eq!(next.tau, s.tau);
        assert_eq!(next.c, s.c);
        assert_relative_eq!(next.e[0], 0.05, max_relative = 1e-12);
        assert_relative_eq!(next.mu[0], 0.6, max_relative = 1e-12);
        for i in 0..3 {
            assert_eq!(next.m1[i], -next.e[i]);
        }
        for j in 0..2 {
            assert_eq!(next.m2[j], -next.mu[j]);
        }
    }

    #[test]
    fn zero_delay_composition_applies_protocol_update() {
        let model = scalar_model(true);
        let mut s = model
            .initial_state(vec![0.4], vec![], vec![0.3], vec![1.0, 1.0])
            .unwrap();
        s.e = vec![0.2, -0.1, 0.05];
        s.tau = 0.05;
        let (mid, _) = model.transmission_jump(&s, 0.0).unwrap();
        let after = model.update_jump(&mid).unwrap();
        // e after the arrival equals the protocol update evaluated at the
        // transmission state.
        let h_e: Vec<f64> = s.e.iter().zip(&mid.m1).map(|(a, b)| a + b).collect();
        assert_eq!(after.e, h_e);
        assert_eq!(after.e[1], s.e[1]);
        assert_eq!(after.e[2], s.e[2]);
    }

    #[test]
    fn constant_schedule_is_arithmetic() {
        let net = scalar_net(0.02, 0.003);
        let sched = sample_schedule(&net, 5).unwrap();
        for (i, (t, d)) in sched.transmissions().iter().enumerate() {
            assert_relative_eq!(*t, 0.02 * (i + 1) as f64, max_relative = 1e-12);
            assert_eq!(*d, 0.003);
        }
    }

    #[test]
    fn uniform_schedule_respects_bounds() {
        let net = NetworkConfig {
            eps_min: 0.01,
            h_mati: 0.1,
            h_mad: 0.04,
            dropouts: 0,
            interval_policy: IntervalPolicy::Uniform,
            delay_policy: DelayPolicy::Uniform,
            seed: 11,
        };
        let sched = sample_schedule(&net, 10_000).unwrap();
        for &h in &sched.intervals {
            assert!(h >= 0.01 && h <= 0.1);
        }
        for (i, &d) in sched.delays.iter().enumerate() {
            let next_h = if i + 1 < sched.intervals.len() {
                sched.intervals[i + 1]
            } else {
                net.h_mad
            };
            assert!(d >= 0.0 && d <= net.h_mad.min(next_h) + 1e-15);
        }
    }

    #[test]
    fn dropouts_tighten_the_interval_bound() {
        let net = NetworkConfig {
            eps_min: 0.001,
            h_mati: 0.1,
            h_mad: 0.01,
            dropouts: 1,
            interval_policy: IntervalPolicy::Uniform,
            delay_policy: DelayPolicy::Constant { tau: 0.0 },
            seed: 3,
        };
        assert_eq!(net.effective_h_mati(), 0.05);
        let sched = sample_schedule(&net, 5_000).unwrap();
        assert!(sched.intervals.iter().all(|&h| h <= 0.05));
    }

    #[test]
    fn inverted_interval_bound_is_rejected() {
        let mut net = scalar_net(0.05, 0.01);
        net.eps_min = 0.5;
        assert!(matches!(
            sample_schedule(&net, 3),
            Err(CoreError::Configuration(_))
        ));
    }

    #[test]
    fn simulation_alternates_events_and_keeps_discipline() {
        let model = scalar_model(true);
        let s0 = model
            .initial_state(vec![0.5], vec![], vec![0.2], vec![2.0, 2.0])
            .unwrap();
        let trace = model
            .simulate(&s0, Horizon { t_max: 0.3, j_max: 1000 }, 1e-3)
            .unwrap();
        assert!(trace.events.len() >= 8);
        for (k, ev) in trace.events.iter().enumerate() {
            let expected = if k % 2 == 0 { EventKind::Transmission } else { EventKind::Update };
            assert_eq!(ev.kind, expected, "event {k} out of order");
        }
        for (_, x) in &trace.arc.records {
            let dec = model.decode(x);
            assert!(dec.state.b <= 1);
            assert!(dec.state.mu.iter().all(|&m| m > 0.0));
            assert!(model.in_flow_set(&dec.state) || model.in_jump_set(&dec.state));
            let cap = if dec.state.b == 0 { model.net.h_mati } else { model.net.h_mad };
            assert!(dec.state.tau <= cap + 1e-9, "tau window violated");
        }
        assert_eq!(trace.metrics.transmissions, trace.metrics.updates);
    }

    #[test]
    fn simulation_is_deterministic() {
        let model = scalar_model(true);
        let s0 = model
            .initial_state(vec![0.5], vec![], vec![0.2], vec![2.0, 2.0])
            .unwrap();
        let h = Horizon { t_max: 0.2, j_max: 1000 };
        let a = model.simulate(&s0, h, 1e-3).unwrap();
        let b = model.simulate(&s0, h, 1e-3).unwrap();
        assert_eq!(a.arc.records.len(), b.arc.records.len());
        for (ra, rb) in a.arc.records.iter().zip(&b.arc.records) {
            assert_eq!(ra.1, rb.1);
        }
    }

    #[test]
    fn near_ideal_network_tracks_the_ode() {
        let sys = scalar_system();
        let ideal = simulate_ideal(&sys, &[0.5], &[], &[0.2], 1.0, 1e-3).unwrap();

        let net = NetworkConfig {
            eps_min: 1e-4,
            h_mati: 1e-3,
            h_mad: 0.0,
            dropouts: 0,
            interval_policy: IntervalPolicy::Constant { h: 1e-3 },
            delay_policy: DelayPolicy::Constant { tau: 0.0 },
            seed: 1,
        };
        let model = assemble(
            scalar_system(),
            QuantizerSpec::uniform(&[1, 1], 1e-9, 1e9),
            scalar_protocol(false, ProtocolTag::RoundRobin),
            net,
        )
        .unwrap();
        let s0 = model
            .initial_state(vec![0.5], vec![], vec![0.2], vec![1.0, 1.0])
            .unwrap();
        let trace = model
            .simulate(&s0, Horizon { t_max: 1.0, j_max: 100_000 }, 1e-3)
            .unwrap();

        // Compare eta at the networked records against linear interpolation
        // of the reference solution.
        let mut worst = 0.0_f64;
        for (_, x) in &trace.arc.records {
            let dec = model.decode(x);
            let t = dec.t_abs;
            let idx = ideal.partition_point(|(ti, _)| *ti <= t).min(ideal.len() - 1);
            let (t1, s1) = &ideal[idx.saturating_sub(1)];
            let (t2, s2) = &ideal[idx];
            let eta_ref = if t2 > t1 {
                let w = (t - t1) / (t2 - t1);
                s1[0] * (1.0 - w) + s2[0] * w
            } else {
                s1[0]
            };
            worst = worst.max((dec.state.eta[0] - eta_ref).abs());
        }
        assert!(worst < 1e-3, "worst gap {worst}");
    }

    #[test]
    fn saturation_reports_node_and_time() {
        let model = assemble(
            scalar_system(),
            QuantizerSpec::zoom(&[1, 2], 0.8, 1.0, 0.6),
            scalar_protocol(true, ProtocolTag::RoundRobin),
            scalar_net(0.05, 0.01),
        )
        .unwrap();
        // Tiny range (m = 1) with mu = 0.1: y_df = 5 saturates node 1.
        let s0 = model
            .initial_state(vec![5.0], vec![], vec![0.0], vec![0.1, 0.1])
            .unwrap();
        let err = model
            .simulate(&s0, Horizon { t_max: 0.2, j_max: 100 }, 1e-3)
            .unwrap_err();
        match err {
            CoreError::Saturation { node, t, .. } => {
                assert_eq!(node, 1);
                assert!(t.is_some());
            }
            other => panic!("expected saturation, got {other}"),
        }
    }

    #[test]
    fn equilibrium_trace_certifies_with_zero_offset() {
        let model = scalar_model(false);
        let s0 = model
            .initial_state(vec![0.0], vec![], vec![0.2], vec![1.0, 1.0])
            .unwrap();
        let trace = model
            .simulate(&s0, Horizon { t_max: 0.3, j_max: 1000 }, 1e-3)
            .unwrap();
        let params = TradeoffParams {
            l0: 1.0,
            l1: 1.0,
            gamma0: 1.0,
            gamma1: 1.3,
            lambda: 0.82,
            rho0: 0.02,
            rho1: 0.02,
            phi00: 1.2,
            phi10: 1.02,
        };
        let gains = GainTerms {
            rho0: 1.0,
            rho1: 1.0,
            theta0: 1.0,
            theta1: 1.0,
            eps_tilde: 0.05,
            eps_min: model.net.eps_min,
            alpha1: crate::tradeoff::KFunction::Quadratic { coeff: 1.0 },
            alpha2: crate::tradeoff::KFunction::Quadratic { coeff: 4.0 },
            alpha3: crate::tradeoff::KFunction::Quadratic { coeff: 1.0 },
            sigma1: crate::tradeoff::KFunction::Quadratic { coeff: 1.0 },
        };
        let report = certify(&model, &trace, &|eta| eta.iter().map(|v| v * v).sum(), 0.005,
            &params, &gains)
            .unwrap();
        assert!(report.passing, "{report:?}");
        assert_eq!(report.sup_e_f, 0.0);
        assert!(report.jumps > 0);
    }
}
