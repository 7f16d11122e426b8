//! Time-scheduling protocols and their exponential-stability certificates.
//!
//! The network transmits one node per transmission. A protocol picks the
//! node (round-robin by counter, or try-once-discard by largest error), the
//! granted node's error block is replaced by its quantization error, and the
//! quantizer parameters shrink. For each protocol/quantizer pair this module
//! evaluates a Lyapunov function `w_bar(theta, mu, c)` that contracts by a
//! certified factor `lambda < 1` across transmissions, exposes the full
//! constant set of the certificate, and checks the certificate claims on
//! random samples.
//!
//! The error vector `theta` stacks `(e_df, e_ct, e_f)`: measurement errors,
//! controller-output errors, and feedforward errors. Nodes cover disjoint
//! index ranges; an actuation node owns a controller-output slice and its
//! matching feedforward slice.

use crate::error::CoreError;
use crate::linalg::norm;
use crate::quantize::{
    self, quantize_node, QuantizerKind, QuantizerSpec, QuantizerState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Scheduling rule selecting the transmitting node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolTag {
    RoundRobin,
    Tod,
    TodTracking,
}

/// What one node carries inside the stacked error vector.
///
/// Ranges are absolute indices into `theta = (e_df, e_ct, e_f)`. An
/// actuation node owns matching controller-output and feedforward slices
/// (`f` is empty when the feedforward signal reaches the reference system
/// directly).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeSignal {
    Measurement { df: Range<usize> },
    Actuation { ct: Range<usize>, f: Range<usize> },
}

impl NodeSignal {
    pub fn dim(&self) -> usize {
        match self {
            NodeSignal::Measurement { df } => df.len(),
            NodeSignal::Actuation { ct, f } => ct.len() + f.len(),
        }
    }
}

/// A protocol: the scheduling rule plus the node layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolKind {
    pub tag: ProtocolTag,
    pub nodes: Vec<NodeSignal>,
}

impl ProtocolKind {
    pub fn new(tag: ProtocolTag, nodes: Vec<NodeSignal>) -> Self {
        Self { tag, nodes }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_dim(&self) -> usize {
        self.nodes.iter().map(NodeSignal::dim).sum()
    }

    /// Total feedforward dimension (the tail of the stacked vector).
    pub fn f_dim(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                NodeSignal::Actuation { f, .. } => f.len(),
                _ => 0,
            })
            .sum()
    }

    /// Absolute indices of node `j`'s block (1-based node numbering).
    pub fn node_indices(&self, node: usize) -> Vec<usize> {
        match &self.nodes[node - 1] {
            NodeSignal::Measurement { df } => df.clone().collect(),
            NodeSignal::Actuation { ct, f } => ct.clone().chain(f.clone()).collect(),
        }
    }

    /// Block dimensions per node, for pairing with a quantizer spec.
    pub fn node_dims(&self) -> Vec<usize> {
        self.nodes.iter().map(NodeSignal::dim).collect()
    }

    /// Checks that the nodes partition `0..total_dim`, actuation slices are
    /// paired, and feedforward slices sit in the tail of the vector.
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.nodes.is_empty() {
            return Err(CoreError::Configuration("protocol needs at least one node".into()));
        }
        let total = self.total_dim();
        let f_dim = self.f_dim();
        let f_start = total - f_dim;
        let mut covered = vec![false; total];
        let mut mark = |r: &Range<usize>| -> Result<(), CoreError> {
            for i in r.clone() {
                if i >= total || covered[i] {
                    return Err(CoreError::Configuration(format!(
                        "node ranges must partition 0..{total}; index {i} repeated or out of range"
                    )));
                }
                covered[i] = true;
            }
            Ok(())
        };
        for (k, n) in self.nodes.iter().enumerate() {
            match n {
                NodeSignal::Measurement { df } => {
                    if df.is_empty() {
                        return Err(CoreError::Configuration(format!(
                            "node {} has an empty measurement slice",
                            k + 1
                        )));
                    }
                    if df.end > f_start {
                        return Err(CoreError::Configuration(format!(
                            "node {}: measurement slice overlaps the feedforward tail",
                            k + 1
                        )));
                    }
                    mark(df)?;
                }
                NodeSignal::Actuation { ct, f } => {
                    if ct.is_empty() {
                        return Err(CoreError::Configuration(format!(
                            "node {} has an empty controller-output slice",
                            k + 1
                        )));
                    }
                    if !f.is_empty() && f.len() != ct.len() {
                        return Err(CoreError::Configuration(format!(
                            "node {}: feedforward slice must match the controller-output slice",
                            k + 1
                        )));
                    }
                    if ct.end > f_start || (!f.is_empty() && f.start < f_start) {
                        return Err(CoreError::Configuration(format!(
                            "node {}: feedforward slices must form the tail of the vector",
                            k + 1
                        )));
                    }
                    mark(ct)?;
                    mark(f)?;
                }
            }
        }
        if covered.iter().any(|&c| !c) {
            return Err(CoreError::Configuration(
                "node ranges leave gaps in the error vector".into(),
            ));
        }
        Ok(())
    }

    fn block_norm(&self, node: usize, theta: &[f64]) -> f64 {
        self.node_indices(node)
            .iter()
            .map(|&i| theta[i] * theta[i])
            .sum::<f64>()
            .sqrt()
    }

    /// Norm the scheduler compares for node `node`: the plain block norm for
    /// try-once-discard, or the tracking form (measurement slice as is,
    /// controller-output minus feedforward) for the tracking variant.
    fn selection_norm(&self, node: usize, theta: &[f64], e_f: Option<&[f64]>) -> f64 {
        match &self.nodes[node - 1] {
            NodeSignal::Measurement { df } => {
                df.clone().map(|i| theta[i] * theta[i]).sum::<f64>().sqrt()
            }
            NodeSignal::Actuation { ct, f } => {
                let f_start = self.total_dim() - self.f_dim();
                ct.clone()
                    .enumerate()
                    .map(|(k, i)| {
                        let fv = if f.is_empty() {
                            0.0
                        } else {
                            let abs = f.start + k;
                            match e_f {
                                Some(ef) => ef[abs - f_start],
                                None => theta[abs],
                            }
                        };
                        let d = theta[i] - fv;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Copies `e` with the feedforward components zeroed.
    pub fn zero_feedforward(&self, e: &[f64]) -> Vec<f64> {
        let mut out = e.to_vec();
        for n in &self.nodes {
            if let NodeSignal::Actuation { f, .. } = n {
                for i in f.clone() {
                    out[i] = 0.0;
                }
            }
        }
        out
    }

    /// Stacks the tracking selection vector `(e_df, e_ct - e_f)`.
    fn selection_vector(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match n {
                NodeSignal::Measurement { df } => out.extend(df.clone().map(|i| theta[i])),
                NodeSignal::Actuation { ct, f } => {
                    for (k, i) in ct.clone().enumerate() {
                        let fv = if f.is_empty() { 0.0 } else { theta[f.start + k] };
                        out.push(theta[i] - fv);
                    }
                }
            }
        }
        out
    }
}

fn check_theta(kind: &ProtocolKind, theta: &[f64]) -> Result<(), CoreError> {
    if theta.len() != kind.total_dim() {
        return Err(CoreError::InvalidArguments(format!(
            "error vector has dimension {}, protocol expects {}",
            theta.len(),
            kind.total_dim()
        )));
    }
    Ok(())
}

/// Selects the transmitting node (numbered from 1).
///
/// Round-robin grants `(c mod l) + 1`; try-once-discard grants the node of
/// largest block norm, lowest index on ties; the tracking variant compares
/// `(e_df, e_ct - e_f)` blocks instead. `e_f` overrides the feedforward
/// components read from `theta` when given (length = feedforward tail).
pub fn grant(
    kind: &ProtocolKind,
    c: u64,
    theta: &[f64],
    e_f: Option<&[f64]>,
) -> Result<usize, CoreError> {
    check_theta(kind, theta)?;
    if let Some(ef) = e_f {
        if ef.len() != kind.f_dim() {
            return Err(CoreError::InvalidArguments(format!(
                "feedforward override has dimension {}, expected {}",
                ef.len(),
                kind.f_dim()
            )));
        }
    }
    let l = kind.num_nodes();
    Ok(match kind.tag {
        ProtocolTag::RoundRobin => (c % l as u64) as usize + 1,
        ProtocolTag::Tod => {
            let mut best = 1;
            let mut best_norm = kind.block_norm(1, theta);
            for j in 2..=l {
                let n = kind.block_norm(j, theta);
                if n > best_norm {
                    best = j;
                    best_norm = n;
                }
            }
            best
        }
        ProtocolTag::TodTracking => {
            let mut best = 1;
            let mut best_norm = kind.selection_norm(1, theta, e_f);
            for j in 2..=l {
                let n = kind.selection_norm(j, theta, e_f);
                if n > best_norm {
                    best = j;
                    best_norm = n;
                }
            }
            best
        }
    })
}

/// Applies one transmission to the error vector: the granted node's block is
/// replaced by its quantization-error block, everything else is unchanged.
pub fn protocol_update(
    kind: &ProtocolKind,
    c: u64,
    theta: &[f64],
    eps_q: &[f64],
) -> Result<Vec<f64>, CoreError> {
    check_theta(kind, theta)?;
    if eps_q.len() != theta.len() {
        return Err(CoreError::InvalidArguments(format!(
            "quantization error has dimension {}, expected {}",
            eps_q.len(),
            theta.len()
        )));
    }
    let g = grant(kind, c, theta, None)?;
    let mut out = theta.to_vec();
    for i in kind.node_indices(g) {
        out[i] = eps_q[i];
    }
    Ok(out)
}

/// Applies the quantization-parameter update for one transmission.
///
/// Zoom shrinks every node by its factor. The box quantizer under
/// round-robin shrinks only the granted node (each node refreshes once per
/// period); under the discard protocols every node shrinks, since the grant
/// sequence gives no per-node refresh guarantee the certificate could use.
pub fn h_mu(
    kind: &ProtocolKind,
    spec: &QuantizerSpec,
    state: &QuantizerState,
    granted: usize,
) -> QuantizerState {
    match (spec.kind, kind.tag) {
        (QuantizerKind::Box, ProtocolTag::RoundRobin) => {
            quantize::mu_update_node(spec, state, granted - 1)
        }
        _ => quantize::mu_update(spec, state),
    }
}

fn check_combo(kind: &ProtocolKind, qspec: &QuantizerSpec) -> Result<(), CoreError> {
    kind.validate()?;
    qspec.validate()?;
    if qspec.dims != kind.node_dims() {
        return Err(CoreError::Configuration(format!(
            "quantizer node dimensions {:?} do not match protocol blocks {:?}",
            qspec.dims,
            kind.node_dims()
        )));
    }
    Ok(())
}

/// Dead-beat sum of the homogeneous round-robin recursion: squares of the
/// iterates that zero one block per step, summed over one period.
fn rr_deadbeat_sq(kind: &ProtocolKind, theta: &[f64], c: u64) -> f64 {
    let l = kind.num_nodes();
    let mut phi = theta.to_vec();
    let mut sum = 0.0;
    for i in 0..l as u64 {
        sum += phi.iter().map(|v| v * v).sum::<f64>();
        let g = ((c + i) % l as u64) as usize + 1;
        for idx in kind.node_indices(g) {
            phi[idx] = 0.0;
        }
    }
    sum
}

/// Geometric tail of the round-robin box parameter recursion, in closed
/// form: node `j` keeps its value for `r_j + 1` steps until first granted,
/// then shrinks by `1/N_j` once per period.
fn rr_box_mu_sq(kind: &ProtocolKind, qspec: &QuantizerSpec, mu: &[f64], c: u64) -> f64 {
    let l = kind.num_nodes() as i64;
    let mut sum = 0.0;
    for j in 0..kind.num_nodes() {
        let r = (j as i64 - (c % l as u64) as i64).rem_euclid(l) as f64;
        let n = qspec.n_levels[j] as f64;
        sum += mu[j] * mu[j] * ((r + 1.0) + l as f64 / (n * n - 1.0));
    }
    sum
}

/// The protocol-level Lyapunov function on the full error vector.
///
/// Round-robin uses the dead-beat sum (plus the closed-form parameter sum
/// for the box kind); the discard protocols weigh the plain (or tracking
/// selection) norm. The uniform quantizer has no shrinking parameter and no
/// certificate, so it is rejected.
pub fn w_bar(
    kind: &ProtocolKind,
    qspec: &QuantizerSpec,
    varpi: f64,
    theta: &[f64],
    mu: &[f64],
    c: u64,
) -> Result<f64, CoreError> {
    check_theta(kind, theta)?;
    if mu.len() != kind.num_nodes() {
        return Err(CoreError::InvalidArguments(format!(
            "mu has {} entries for {} nodes",
            mu.len(),
            kind.num_nodes()
        )));
    }
    if qspec.kind == QuantizerKind::Uniform {
        return Err(CoreError::UnsupportedCombination(
            "the uniform quantizer has no contraction certificate".into(),
        ));
    }
    Ok(match (kind.tag, qspec.kind) {
        (ProtocolTag::RoundRobin, QuantizerKind::Zoom) => {
            varpi * rr_deadbeat_sq(kind, theta, c).sqrt() + norm(mu)
        }
        (ProtocolTag::RoundRobin, QuantizerKind::Box) => {
            varpi * rr_deadbeat_sq(kind, theta, c).sqrt()
                + rr_box_mu_sq(kind, qspec, mu, c).sqrt()
        }
        (ProtocolTag::Tod, _) => varpi * norm(theta) + norm(mu),
        (ProtocolTag::TodTracking, _) => {
            varpi * norm(&kind.selection_vector(theta)) + norm(mu)
        }
        (ProtocolTag::RoundRobin, QuantizerKind::Uniform) => unreachable!(),
    })
}

fn check_state_args(
    kind: &ProtocolKind,
    e: &[f64],
    mu: &[f64],
    m1: &[f64],
    m2: &[f64],
    b: u8,
) -> Result<(), CoreError> {
    check_theta(kind, e)?;
    if m1.len() != e.len() || m2.len() != mu.len() || mu.len() != kind.num_nodes() {
        return Err(CoreError::InvalidArguments(
            "payload dimensions must match the error vector and node count".into(),
        ));
    }
    if b > 1 {
        return Err(CoreError::InvalidArguments(format!("phase flag must be 0 or 1, got {b}")));
    }
    Ok(())
}

/// The per-proposition Lyapunov function on the closed-loop error state.
///
/// It depends only on `(e, mu, c)`: the payloads and phase flag are accepted
/// for signature compatibility and dimension checking. Round-robin and
/// plain discard ignore the feedforward components; the tracking form
/// subtracts them from the controller-output components.
pub fn uges_w(
    kind: &ProtocolKind,
    qspec: &QuantizerSpec,
    varpi: f64,
    e: &[f64],
    mu: &[f64],
    m1: &[f64],
    m2: &[f64],
    c: u64,
    b: u8,
) -> Result<f64, CoreError> {
    check_combo(kind, qspec)?;
    check_state_args(kind, e, mu, m1, m2, b)?;
    match kind.tag {
        ProtocolTag::TodTracking => w_bar(kind, qspec, varpi, e, mu, c),
        _ => w_bar(kind, qspec, varpi, &kind.zero_feedforward(e), mu, c),
    }
}

/// The delay-aware composite Lyapunov function built from `w_bar`.
///
/// With `A` evaluated at the current errors and `B` at the errors after the
/// stored payloads are absorbed (feedforward slots zeroed in both), the
/// value is `max(A, B)` while waiting to transmit and
/// `max(lambda1/lambda2 * A, B)` while a transmission is in flight.
/// Transmissions shrink it by the certificate's contraction factor and
/// updates never increase it.
pub fn composite_w(
    kind: &ProtocolKind,
    qspec: &QuantizerSpec,
    varpi: f64,
    e: &[f64],
    mu: &[f64],
    m1: &[f64],
    m2: &[f64],
    c: u64,
    b: u8,
) -> Result<f64, CoreError> {
    let cert = uges_constants(kind, qspec, varpi, None)?;
    check_state_args(kind, e, mu, m1, m2, b)?;
    let a = w_bar(kind, qspec, varpi, &kind.zero_feedforward(e), mu, c)?;
    let absorbed: Vec<f64> = e.iter().zip(m1).map(|(x, y)| x + y).collect();
    let mu_next: Vec<f64> = mu.iter().zip(m2).map(|(x, y)| x + y).collect();
    let b_term = w_bar(kind, qspec, varpi, &kind.zero_feedforward(&absorbed), &mu_next, c)?;
    Ok(if b == 0 {
        a.max(b_term)
    } else {
        (cert.lambda1 / cert.lambda2 * a).max(b_term)
    })
}

/// Linear growth constants of the error flow: `|g_e| + |g_mu| <=
/// m_bar(x) + m_e |(e, mu)| + m_f |e_f|`. The state-dependent part enters
/// the certification pipeline separately.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GrowthBounds {
    pub m_e: f64,
    pub m_f: f64,
}

/// Complete constant set certifying a protocol/quantizer pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UgesCertificate {
    /// Contraction factor across one transmission, < 1.
    pub lambda: f64,
    /// Exponential decay factor of the composite function (equals lambda).
    pub lambda1: f64,
    /// Growth factor across a counter bump without a transmission.
    pub lambda2: f64,
    /// Lipschitz bound of `w_bar` in its vector arguments.
    pub m1: f64,
    /// Error-term weighting used by `w_bar`.
    pub varpi: f64,
    /// Lower sandwich slope: `alpha1_w * |(theta, mu)| <= w_bar`.
    pub alpha1_w: f64,
    /// Upper sandwich slope: `w_bar <= alpha2_w * |(theta, mu)|`.
    pub alpha2_w: f64,
    /// Feedforward gain slope at jumps of the composite function.
    pub alpha3_w_slope: f64,
    /// Feedforward gain slope at updates (zero for these protocols).
    pub alpha4_w_slope: f64,
    /// Flow gain `m1 * m_e / alpha1_w` (needs growth bounds).
    pub l0: Option<f64>,
    /// Flow gain `lambda2 * m1 * m_e / (lambda1 * alpha1_w)`.
    pub l1: Option<f64>,
    /// Feedforward flow gain `(m_e m1 / alpha1_w + m_f) m1`.
    pub sigma_w_slope: Option<f64>,
}

/// Computes the certificate constants for a protocol/quantizer pair.
///
/// The weighting must lie in the pair's admissible interval, which balances
/// the quantization injection against the parameter shrink rate; outside it
/// no contraction below 1 is certified.
pub fn uges_constants(
    kind: &ProtocolKind,
    qspec: &QuantizerSpec,
    varpi: f64,
    growth: Option<&GrowthBounds>,
) -> Result<UgesCertificate, CoreError> {
    check_combo(kind, qspec)?;
    let l = kind.num_nodes() as f64;
    let sql = l.sqrt();
    let rr_floor = ((l - 1.0) / l).sqrt();
    let (lambda, lambda2, m1, alpha2) = match qspec.kind {
        QuantizerKind::Uniform => {
            return Err(CoreError::UnsupportedCombination(
                "the uniform quantizer has no contraction certificate".into(),
            ))
        }
        QuantizerKind::Zoom => {
            let max_delta = qspec.delta.iter().cloned().fold(0.0_f64, f64::max);
            let max_omega = qspec.omega.iter().cloned().fold(0.0_f64, f64::max);
            match kind.tag {
                ProtocolTag::RoundRobin => {
                    let hi = (1.0 - max_omega) / (sql * max_delta);
                    if !(varpi > 0.0 && varpi < hi) {
                        return Err(CoreError::InvalidWeighting(format!(
                            "varpi = {varpi} outside (0, {hi})"
                        )));
                    }
                    (
                        rr_floor.max(varpi * sql * max_delta + max_omega),
                        sql,
                        varpi * sql,
                        1.0 + varpi * sql,
                    )
                }
                ProtocolTag::Tod | ProtocolTag::TodTracking => {
                    let hi = (1.0 - max_omega) / max_delta;
                    if !(varpi > 0.0 && varpi < hi) {
                        return Err(CoreError::InvalidWeighting(format!(
                            "varpi = {varpi} outside (0, {hi})"
                        )));
                    }
                    (
                        rr_floor.max(varpi * max_delta + max_omega),
                        1.0,
                        varpi,
                        1.0 + varpi,
                    )
                }
            }
        }
        QuantizerKind::Box => {
            let d = qspec
                .dims
                .iter()
                .zip(&qspec.n_levels)
                .map(|(&n, &nl)| (n as f64).sqrt() / nl as f64)
                .fold(0.0_f64, f64::max);
            let n_bar = *qspec.n_levels.iter().min().expect("validated nonempty") as f64;
            let rho_bar = ((n_bar * n_bar * l - n_bar * n_bar + 1.0) / (n_bar * n_bar * l)).sqrt();
            match kind.tag {
                ProtocolTag::RoundRobin => {
                    let hi = (1.0 - rho_bar) / (d * sql);
                    if !(varpi > 0.0 && varpi < hi) {
                        return Err(CoreError::InvalidWeighting(format!(
                            "varpi = {varpi} outside (0, {hi})"
                        )));
                    }
                    (
                        rr_floor.max(varpi * d * sql + rho_bar),
                        sql,
                        varpi * sql,
                        varpi * sql + (n_bar * n_bar * l / (n_bar * n_bar - 1.0)).sqrt(),
                    )
                }
                ProtocolTag::Tod | ProtocolTag::TodTracking => {
                    let hi = (1.0 - rho_bar) / d;
                    if !(varpi > 0.0 && varpi < hi) {
                        return Err(CoreError::InvalidWeighting(format!(
                            "varpi = {varpi} outside (0, {hi})"
                        )));
                    }
                    (
                        rr_floor.max(varpi * d + rho_bar),
                        1.0,
                        varpi,
                        1.0 + varpi * sql,
                    )
                }
            }
        }
    };
    let alpha1 = varpi.min(1.0);
    let mut cert = UgesCertificate {
        lambda,
        lambda1: lambda,
        lambda2,
        m1,
        varpi,
        alpha1_w: alpha1,
        alpha2_w: alpha2,
        alpha3_w_slope: (1.0 + lambda) * m1,
        alpha4_w_slope: 0.0,
        l0: None,
        l1: None,
        sigma_w_slope: None,
    };
    if let Some(g) = growth {
        if g.m_e < 0.0 || g.m_f < 0.0 {
            return Err(CoreError::InvalidArguments(
                "growth constants must be nonnegative".into(),
            ));
        }
        cert.l0 = Some(m1 * g.m_e / alpha1);
        cert.l1 = Some(lambda2 * m1 * g.m_e / (lambda * alpha1));
        cert.sigma_w_slope = Some((g.m_e * m1 / alpha1 + g.m_f) * m1);
    }
    Ok(cert)
}

/// Sampling controls for [`verify_uges`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UgesVerifyConfig {
    pub samples: usize,
    pub seed: u64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Default for UgesVerifyConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 42,
            mu_min: 0.05,
            mu_max: 5.0,
        }
    }
}

/// Observed extremes of the certificate inequalities on random samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UgesReport {
    pub certificate: UgesCertificate,
    pub samples_requested: usize,
    pub samples_checked: usize,
    /// Samples whose transmitted signal saturated the quantizer (outside
    /// the admissible range), rejected rather than failed.
    pub samples_rejected: usize,
    /// Max of `w_bar(after transmission, c+1) / w_bar(before, c)`.
    pub max_contraction_ratio: f64,
    /// Max of `w_bar(theta, mu, c+1) / w_bar(theta, mu, c)`.
    pub max_counter_ratio: f64,
    /// Min of `w_bar / |(theta, mu)|`.
    pub min_lower_sandwich: f64,
    /// Max of `w_bar / |(theta, mu)|`.
    pub max_upper_sandwich: f64,
    pub passing: bool,
    pub note: Option<String>,
}

const FLOAT_SLACK: f64 = 1e-12;

/// Checks the certificate inequalities on seeded random samples.
///
/// Each sample draws errors, parameters, a counter phase, and an in-range
/// transmitted signal for the granted node; the contraction, counter-bump,
/// and sandwich ratios are accumulated and compared against the constants.
/// The tracking protocol is sampled with zero feedforward error (the regime
/// its selection rule is certified for); the report notes this.
pub fn verify_uges(
    kind: &ProtocolKind,
    qspec: &QuantizerSpec,
    varpi: f64,
    cfg: &UgesVerifyConfig,
) -> Result<UgesReport, CoreError> {
    let cert = uges_constants(kind, qspec, varpi, None)?;
    if cfg.samples == 0 {
        return Err(CoreError::InvalidArguments("sample count must be positive".into()));
    }
    if !(cfg.mu_min > 0.0 && cfg.mu_max >= cfg.mu_min) {
        return Err(CoreError::InvalidArguments("need 0 < mu_min <= mu_max".into()));
    }
    let l = kind.num_nodes();
    let n_theta = kind.total_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut checked = 0_usize;
    let mut rejected = 0_usize;
    let mut max_contraction = 0.0_f64;
    let mut max_counter = 0.0_f64;
    let mut min_lower = f64::INFINITY;
    let mut max_upper = 0.0_f64;

    for _ in 0..cfg.samples {
        let c = rng.gen_range(0..(4 * l as u64));
        let mu: Vec<f64> = (0..l).map(|_| rng.gen_range(cfg.mu_min..=cfg.mu_max)).collect();
        let scale = 10.0_f64.powf(rng.gen_range(-2.0..=2.0));
        let mut theta: Vec<f64> = (0..n_theta).map(|_| rng.gen_range(-scale..=scale)).collect();
        if kind.tag == ProtocolTag::TodTracking {
            theta = kind.zero_feedforward(&theta);
        }

        let g = grant(kind, c, &theta, None)?;
        let qstate = QuantizerState {
            mu: mu.clone(),
            z_hat: match qspec.kind {
                QuantizerKind::Box => vec![0.0; qspec.total_dim()],
                _ => Vec::new(),
            },
        };
        // Transmitted signal for the granted node, drawn around the range
        // boundary so a small fraction saturates and exercises rejection.
        let dim_g = qspec.dims[g - 1];
        let radius = match qspec.kind {
            QuantizerKind::Box => qstate.mu[g - 1],
            _ => qspec.m[g - 1] * qstate.mu[g - 1],
        };
        let z_g: Vec<f64> = (0..dim_g)
            .map(|_| rng.gen_range(-1.02 * radius..=1.02 * radius))
            .collect();
        let eps_g = match quantize_node(qspec, &qstate, g - 1, &z_g) {
            Ok(out) => out.eps,
            Err(CoreError::Saturation { .. }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut eps_full = vec![0.0; n_theta];
        for (k, &i) in kind.node_indices(g).iter().enumerate() {
            eps_full[i] = eps_g[k];
        }

        let theta_next = protocol_update(kind, c, &theta, &eps_full)?;
        let mu_next = h_mu(kind, qspec, &qstate, g).mu;

        let w0 = w_bar(kind, qspec, varpi, &theta, &mu, c)?;
        let w1 = w_bar(kind, qspec, varpi, &theta_next, &mu_next, c + 1)?;
        let w_bump = w_bar(kind, qspec, varpi, &theta, &mu, c + 1)?;
        max_contraction = max_contraction.max(w1 / w0);
        max_counter = max_counter.max(w_bump / w0);

        let mut stacked = theta.clone();
        stacked.extend_from_slice(&mu);
        let mag = norm(&stacked);
        min_lower = min_lower.min(w0 / mag);
        max_upper = max_upper.max(w0 / mag);
        checked += 1;
    }

    let passing = max_contraction <= cert.lambda * (1.0 + FLOAT_SLACK)
        && max_counter <= cert.lambda2 * (1.0 + FLOAT_SLACK)
        && min_lower >= cert.alpha1_w * (1.0 - FLOAT_SLACK)
        && max_upper <= cert.alpha2_w * (1.0 + FLOAT_SLACK)
        && checked > 0;
    Ok(UgesReport {
        certificate: cert,
        samples_requested: cfg.samples,
        samples_checked: checked,
        samples_rejected: rejected,
        max_contraction_ratio: max_contraction,
        max_counter_ratio: max_counter,
        min_lower_sandwich: min_lower,
        max_upper_sandwich: max_upper,
        passing,
        note: match kind.tag {
            ProtocolTag::TodTracking => {
                Some("tracking protocol sampled with zero feedforward error".into())
            }
            _ => None,
        },
    })
}
