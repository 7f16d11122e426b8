//! Per-node signal quantizers: uniform, zoom, and box.
//!
//! Signals are partitioned into nodes; node `j` carries an `n_j`-dimensional
//! block quantized independently. Every kind obeys the same sector contract:
//!
//! * in-range signals quantize with error inside the kind's bound set
//!   (zoom/uniform: Euclidean radius `delta_j * mu_j`; box: `sqrt(n_j) * mu_j / N_j`),
//! * out-of-range signals produce detectably large outputs (zoom/uniform
//!   only; the box kind has no detection margin),
//! * signals inside the deadzone quantize to exactly zero.
//!
//! Zoom and uniform kinds share a mid-tread grid of per-component spacing
//! `2 delta mu / sqrt(n)` clipped to cover the Euclidean range ball of radius
//! `M mu`; zoom shrinks `mu` by `omega` at each update while uniform keeps it
//! fixed. The box kind subdivides an inf-norm box of radius `mu` around a
//! tracked center into `N` sub-boxes per axis, returns the selected sub-box
//! center, and shrinks `mu` by `1/N`.

use crate::error::CoreError;
use crate::linalg::norm;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Quantizer family. Uniform and zoom share the same grid; they differ only
/// in the update law for `mu`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Uniform,
    Zoom,
    Box,
}

/// Static description of the per-node quantizers.
///
/// Vectors are indexed by node. `deadzone` and `d` may be left empty, which
/// means zero deadzone and the default detection margin `delta/m`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub kind: QuantizerKind,
    /// Signal dimension per node.
    pub dims: Vec<usize>,
    /// Error radius per node (zoom/uniform).
    #[serde(default)]
    pub delta: Vec<f64>,
    /// Range radius per node (zoom/uniform).
    #[serde(default)]
    pub m: Vec<f64>,
    /// Zoom-in factor per node, in (0,1) (zoom).
    #[serde(default)]
    pub omega: Vec<f64>,
    /// Sub-boxes per axis per node, at least 2 (box).
    #[serde(default)]
    pub n_levels: Vec<u32>,
    /// Deadzone radius per node; empty means zero everywhere.
    #[serde(default)]
    pub deadzone: Vec<f64>,
    /// Saturation-detection margin per node; empty means `delta/m`.
    #[serde(default)]
    pub d: Vec<f64>,
}

impl QuantizerSpec {
    pub fn zoom(dims: &[usize], delta: f64, m: f64, omega: f64) -> Self {
        let l = dims.len();
        Self {
            kind: QuantizerKind::Zoom,
            dims: dims.to_vec(),
            delta: vec![delta; l],
            m: vec![m; l],
            omega: vec![omega; l],
            n_levels: Vec::new(),
            deadzone: Vec::new(),
            d: Vec::new(),
        }
    }

    pub fn uniform(dims: &[usize], delta: f64, m: f64) -> Self {
        let l = dims.len();
        Self {
            kind: QuantizerKind::Uniform,
            dims: dims.to_vec(),
            delta: vec![delta; l],
            m: vec![m; l],
            omega: Vec::new(),
            n_levels: Vec::new(),
            deadzone: Vec::new(),
            d: Vec::new(),
        }
    }

    pub fn boxed(dims: &[usize], n_levels: u32) -> Self {
        let l = dims.len();
        Self {
            kind: QuantizerKind::Box,
            dims: dims.to_vec(),
            delta: Vec::new(),
            m: Vec::new(),
            omega: Vec::new(),
            n_levels: vec![n_levels; l],
            deadzone: Vec::new(),
            d: Vec::new(),
        }
    }

    /// Sets the same deadzone radius on every node.
    pub fn with_deadzone(mut self, dz: f64) -> Self {
        self.deadzone = vec![dz; self.dims.len()];
        self
    }

    /// Sets the deadzone radius of one node.
    pub fn with_node_deadzone(mut self, node: usize, dz: f64) -> Self {
        if self.deadzone.len() != self.dims.len() {
            self.deadzone = vec![0.0; self.dims.len()];
        }
        self.deadzone[node] = dz;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Index range of node `j` inside the stacked signal vector.
    pub fn node_range(&self, j: usize) -> Range<usize> {
        let start: usize = self.dims[..j].iter().sum();
        start..start + self.dims[j]
    }

    pub fn node_ranges(&self) -> Vec<Range<usize>> {
        (0..self.num_nodes()).map(|j| self.node_range(j)).collect()
    }

    /// Deadzone radius of node `j` (zero when unset).
    pub fn deadzone_of(&self, j: usize) -> f64 {
        self.deadzone.get(j).copied().unwrap_or(0.0)
    }

    /// Saturation-detection margin of node `j` (`delta/m` when unset).
    pub fn margin_of(&self, j: usize) -> f64 {
        match self.kind {
            QuantizerKind::Box => 0.0,
            _ => self
                .d
                .get(j)
                .copied()
                .unwrap_or(self.delta[j] / self.m[j]),
        }
    }

    /// Euclidean error bound of node `j` at parameter `mu_j`.
    pub fn error_bound(&self, j: usize, mu_j: f64) -> f64 {
        match self.kind {
            QuantizerKind::Box => (self.dims[j] as f64).sqrt() * mu_j / self.n_levels[j] as f64,
            _ => self.delta[j] * mu_j,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let l = self.dims.len();
        if l == 0 {
            return Err(CoreError::Configuration("quantizer needs at least one node".into()));
        }
        if self.dims.iter().any(|&n| n == 0) {
            return Err(CoreError::Configuration("node dimensions must be positive".into()));
        }
        if !self.deadzone.is_empty() && self.deadzone.len() != l {
            return Err(CoreError::Configuration(
                "deadzone must be empty or give one radius per node".into(),
            ));
        }
        if self.deadzone.iter().any(|&dz| !(dz >= 0.0)) {
            return Err(CoreError::Configuration("deadzone radii must be >= 0".into()));
        }
        match self.kind {
            QuantizerKind::Zoom | QuantizerKind::Uniform => {
                if self.delta.len() != l || self.m.len() != l {
                    return Err(CoreError::Configuration(
                        "zoom/uniform quantizers need delta and m for every node".into(),
                    ));
                }
                for j in 0..l {
                    if !(self.delta[j] > 0.0 && self.m[j] > self.delta[j]) {
                        return Err(CoreError::Configuration(format!(
                            "node {j}: need m > delta > 0 (got delta = {}, m = {})",
                            self.delta[j], self.m[j]
                        )));
                    }
                    if self.deadzone_of(j) > self.delta[j] {
                        return Err(CoreError::Configuration(format!(
                            "node {j}: deadzone {} exceeds error radius {}",
                            self.deadzone_of(j),
                            self.delta[j]
                        )));
                    }
                    let d = self.margin_of(j);
                    // The mid-tread grid only guarantees detection outside
                    // (1-d) of the range ball for d >= delta/m.
                    if !(d < 1.0 && d >= self.delta[j] / self.m[j] - 1e-15) {
                        return Err(CoreError::Configuration(format!(
                            "node {j}: detection margin {d} must lie in [delta/m, 1)"
                        )));
                    }
                }
                if self.kind == QuantizerKind::Zoom {
                    if self.omega.len() != l {
                        return Err(CoreError::Configuration(
                            "zoom quantizers need omega for every node".into(),
                        ));
                    }
                    if self.omega.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
                        return Err(CoreError::Configuration(
                            "zoom factors must lie in (0, 1)".into(),
                        ));
                    }
                }
            }
            QuantizerKind::Box => {
                if self.n_levels.len() != l {
                    return Err(CoreError::Configuration(
                        "box quantizers need n_levels for every node".into(),
                    ));
                }
                if self.n_levels.iter().any(|&n| n < 2) {
                    return Err(CoreError::Configuration(
                        "box subdivision counts must be at least 2".into(),
                    ));
                }
                for j in 0..l {
                    let cap = (self.dims[j] as f64).sqrt() / self.n_levels[j] as f64;
                    if self.deadzone_of(j) > cap {
                        return Err(CoreError::Configuration(format!(
                            "node {j}: deadzone {} exceeds the box error bound {cap} at mu = 1",
                            self.deadzone_of(j)
                        )));
                    }
                }
                if self.d.iter().any(|&d| d != 0.0) {
                    return Err(CoreError::Configuration(
                        "box quantizers have no detection margin; d must be 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Mutable quantizer state: the parameter vector and, for the box kind, the
/// tracked per-node centers (stacked to the full signal dimension).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerState {
    /// One positive parameter per node.
    pub mu: Vec<f64>,
    /// Stacked box centers; empty for zoom/uniform.
    pub z_hat: Vec<f64>,
}

impl QuantizerState {
    /// Fresh state with the given parameters; box centers start at zero.
    pub fn new(spec: &QuantizerSpec, mu: &[f64]) -> Result<Self, CoreError> {
        if mu.len() != spec.num_nodes() {
            return Err(CoreError::Configuration(format!(
                "mu has {} entries for {} nodes",
                mu.len(),
                spec.num_nodes()
            )));
        }
        if mu.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(CoreError::Configuration("mu must be positive and finite".into()));
        }
        let z_hat = match spec.kind {
            QuantizerKind::Box => vec![0.0; spec.total_dim()],
            _ => Vec::new(),
        };
        Ok(Self {
            mu: mu.to_vec(),
            z_hat,
        })
    }
}

/// Result of quantizing one node's signal block.
#[derive(Clone, Debug)]
pub struct NodeQuantizeResult {
    pub q: Vec<f64>,
    /// `q - z`.
    pub eps: Vec<f64>,
}

/// Result of quantizing the full stacked signal.
#[derive(Clone, Debug)]
pub struct QuantizeResult {
    pub q: Vec<f64>,
    /// `q - z`.
    pub eps: Vec<f64>,
    /// Input state with box centers moved to the selected sub-box centers.
    pub state: QuantizerState,
}

fn grid_node(delta: f64, m: f64, mu: f64, z: &[f64]) -> Vec<f64> {
    let n = z.len() as f64;
    let s = 2.0 * delta * mu / n.sqrt();
    let r = m * n.sqrt() / delta;
    // Smallest clip index covering the range ball: k_top > (r - 1) / 2.
    let k_top = ((r - 1.0) / 2.0).floor() + 1.0;
    z.iter()
        .map(|&zi| (zi / s).round().clamp(-k_top, k_top) * s)
        .collect()
}

fn box_node(n_sub: u32, mu: f64, z_hat: &[f64], z: &[f64]) -> Vec<f64> {
    let n_sub_f = n_sub as f64;
    let w = 2.0 * mu / n_sub_f;
    z.iter()
        .zip(z_hat)
        .map(|(&zi, &ci)| {
            let lo = ci - mu;
            // Boundary points go to the lower-index sub-box.
            let idx = ((zi - lo) / w).ceil() - 1.0;
            let idx = idx.clamp(0.0, n_sub_f - 1.0);
            lo + (idx + 0.5) * w
        })
        .collect()
}

fn quantize_node_inner(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    node: usize,
    z: &[f64],
    checked: bool,
) -> Result<NodeQuantizeResult, CoreError> {
    if z.len() != spec.dims[node] {
        return Err(CoreError::InvalidArguments(format!(
            "node {node} expects dimension {} but got {}",
            spec.dims[node],
            z.len()
        )));
    }
    let mu = state.mu[node];
    // Deadzone first: anything inside it maps to exactly zero.
    if norm(z) <= spec.deadzone_of(node) * mu {
        return Ok(NodeQuantizeResult {
            q: vec![0.0; z.len()],
            eps: z.iter().map(|&v| -v).collect(),
        });
    }
    let q = match spec.kind {
        QuantizerKind::Zoom | QuantizerKind::Uniform => {
            if checked {
                let mag = norm(z);
                let bound = spec.m[node] * mu;
                if mag > bound {
                    return Err(CoreError::Saturation {
                        node,
                        magnitude: mag,
                        bound,
                        t: None,
                    });
                }
            }
            grid_node(spec.delta[node], spec.m[node], mu, z)
        }
        QuantizerKind::Box => {
            let range = spec.node_range(node);
            let z_hat = &state.z_hat[range];
            if checked {
                let inf = z
                    .iter()
                    .zip(z_hat)
                    .map(|(&zi, &ci)| (zi - ci).abs())
                    .fold(0.0_f64, f64::max);
                if inf > mu {
                    return Err(CoreError::Saturation {
                        node,
                        magnitude: inf,
                        bound: mu,
                        t: None,
                    });
                }
            }
            box_node(spec.n_levels[node], mu, z_hat, z)
        }
    };
    let eps = q.iter().zip(z).map(|(&qi, &zi)| qi - zi).collect();
    Ok(NodeQuantizeResult { q, eps })
}

/// Quantizes one node's block, failing on saturation (the signal outside the
/// node's range set).
pub fn quantize_node(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    node: usize,
    z: &[f64],
) -> Result<NodeQuantizeResult, CoreError> {
    quantize_node_inner(spec, state, node, z, true)
}

/// Quantizes one node's block without the saturation check; out-of-range
/// signals clip to the outermost level (used by sector verification).
pub fn quantize_node_unchecked(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    node: usize,
    z: &[f64],
) -> NodeQuantizeResult {
    quantize_node_inner(spec, state, node, z, false).expect("dimension checked by caller")
}

fn quantize_inner(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    z: &[f64],
    checked: bool,
) -> Result<QuantizeResult, CoreError> {
    if z.len() != spec.total_dim() {
        return Err(CoreError::InvalidArguments(format!(
            "signal has dimension {} but the quantizer expects {}",
            z.len(),
            spec.total_dim()
        )));
    }
    let mut q = Vec::with_capacity(z.len());
    let mut eps = Vec::with_capacity(z.len());
    let mut next = state.clone();
    for j in 0..spec.num_nodes() {
        let range = spec.node_range(j);
        let out = quantize_node_inner(spec, state, j, &z[range.clone()], checked)?;
        if spec.kind == QuantizerKind::Box {
            next.z_hat[range].copy_from_slice(&out.q);
        }
        q.extend_from_slice(&out.q);
        eps.extend_from_slice(&out.eps);
    }
    Ok(QuantizeResult { q, eps, state: next })
}

/// Quantizes the full stacked signal, failing on any node's saturation.
/// Box centers in the returned state move to the selected sub-box centers.
pub fn quantize(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    z: &[f64],
) -> Result<QuantizeResult, CoreError> {
    quantize_inner(spec, state, z, true)
}

/// Full-signal variant without saturation checks.
pub fn quantize_unchecked(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    z: &[f64],
) -> Result<QuantizeResult, CoreError> {
    quantize_inner(spec, state, z, false)
}

/// Applies the parameter update to every node: zoom `mu *= omega`, box
/// `mu /= N`, uniform unchanged. Box centers are not touched.
pub fn mu_update(spec: &QuantizerSpec, state: &QuantizerState) -> QuantizerState {
    let mut next = state.clone();
    for j in 0..spec.num_nodes() {
        mu_update_node_in_place(spec, &mut next, j);
    }
    next
}

/// Applies the parameter update to a single node (protocols that refresh one
/// node per transmission use this).
pub fn mu_update_node(spec: &QuantizerSpec, state: &QuantizerState, node: usize) -> QuantizerState {
    let mut next = state.clone();
    mu_update_node_in_place(spec, &mut next, node);
    next
}

fn mu_update_node_in_place(spec: &QuantizerSpec, state: &mut QuantizerState, node: usize) {
    match spec.kind {
        QuantizerKind::Zoom => state.mu[node] *= spec.omega[node],
        QuantizerKind::Box => state.mu[node] /= spec.n_levels[node] as f64,
        QuantizerKind::Uniform => {}
    }
}

/// Per-clause pass counts for one node of a sector report.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ClauseStats {
    pub total: usize,
    pub passed: usize,
}

impl ClauseStats {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.passed as f64 / self.total as f64
        }
    }
}

/// Sector verification outcome for one node. `detection` is `None` where the
/// saturation-detection clause does not apply (box kind).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeSectorReport {
    pub node: usize,
    /// In-range samples whose error stayed inside the bound set.
    pub in_range: ClauseStats,
    /// Out-of-range samples whose output left the shrunk range set.
    pub detection: Option<ClauseStats>,
    /// Deadzone samples that quantized to exactly zero.
    pub deadzone: ClauseStats,
}

impl NodeSectorReport {
    pub fn passing(&self) -> bool {
        self.in_range.fraction() == 1.0
            && self.detection.map_or(true, |s| s.fraction() == 1.0)
            && self.deadzone.fraction() == 1.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectorReport {
    pub nodes: Vec<NodeSectorReport>,
}

impl SectorReport {
    pub fn passing(&self) -> bool {
        self.nodes.iter().all(NodeSectorReport::passing)
    }
}

/// Relative slack absorbing the float rounding of level selection; the
/// sector bounds themselves carry no model-level tolerance.
const FLOAT_SLACK: f64 = 1e-12;

/// Evaluates the three sector clauses on per-node sample sets.
///
/// `samples[j]` lists signals for node `j` (each of dimension `n_j`); the
/// caller is responsible for covering the deadzone, the in-range annulus,
/// and the out-of-range region. Fractions of 1.0 everywhere mean the node's
/// quantizer satisfies its contract on the grid.
pub fn verify_sector(
    spec: &QuantizerSpec,
    state: &QuantizerState,
    samples: &[Vec<Vec<f64>>],
) -> Result<SectorReport, CoreError> {
    spec.validate()?;
    if samples.len() != spec.num_nodes() {
        return Err(CoreError::InvalidArguments(format!(
            "got sample sets for {} nodes, expected {}",
            samples.len(),
            spec.num_nodes()
        )));
    }
    if samples.iter().all(|s| s.is_empty()) {
        return Err(CoreError::InvalidArguments("empty sample grid".into()));
    }
    let mut nodes = Vec::with_capacity(spec.num_nodes());
    for (j, node_samples) in samples.iter().enumerate() {
        let mu = state.mu[j];
        let mut in_range = ClauseStats::default();
        let mut detection = ClauseStats::default();
        let mut deadzone = ClauseStats::default();
        for z in node_samples {
            if z.len() != spec.dims[j] {
                return Err(CoreError::InvalidArguments(format!(
                    "node {j} sample of dimension {} (expected {})",
                    z.len(),
                    spec.dims[j]
                )));
            }
            let out = quantize_node_unchecked(spec, state, j, z);
            let inside = match spec.kind {
                QuantizerKind::Box => {
                    let range = spec.node_range(j);
                    z.iter()
                        .zip(&state.z_hat[range])
                        .map(|(&zi, &ci)| (zi - ci).abs())
                        .fold(0.0_f64, f64::max)
                        <= mu
                }
                _ => norm(z) <= spec.m[j] * mu,
            };
            if inside {
                in_range.total += 1;
                let bound = spec.error_bound(j, mu);
                if norm(&out.eps) <= bound * (1.0 + FLOAT_SLACK) {
                    in_range.passed += 1;
                }
            } else if spec.kind != QuantizerKind::Box {
                detection.total += 1;
                let shrunk = (1.0 - spec.margin_of(j)) * spec.m[j] * mu;
                if norm(&out.q) > shrunk * (1.0 - FLOAT_SLACK) {
                    detection.passed += 1;
                }
            }
            if norm(z) <= spec.deadzone_of(j) * mu {
                deadzone.total += 1;
                if out.q.iter().all(|&v| v == 0.0) {
                    deadzone.passed += 1;
                }
            }
        }
        nodes.push(NodeSectorReport {
            node: j,
            in_range,
            detection: match spec.kind {
                QuantizerKind::Box => None,
                _ => Some(detection),
            },
            deadzone,
        });
    }
    Ok(SectorReport { nodes })
}
