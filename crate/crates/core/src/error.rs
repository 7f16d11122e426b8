//! Toolkit-wide error type.
//!
//! Numerical routines fail loudly: divergence, quantizer saturation, and
//! domain violations abort a computation instead of clipping or silently
//! substituting values.

use thiserror::Error;

/// Errors shared across the toolkit's modules.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A state component became non-finite during flow integration.
    /// Carries the last finite state for post-mortem inspection.
    #[error("integration diverged at t = {t}: non-finite state component (last finite state retained)")]
    IntegrationDiverged { t: f64, last_state: Vec<f64> },

    /// The initial state lies in neither the flow set nor the jump set.
    #[error("initial state lies in neither the flow set nor the jump set")]
    InvalidInitialState,

    /// Too many consecutive jumps without any flow in between.
    #[error("zeno guard tripped at t = {t}: {jumps} consecutive jumps without flow")]
    ZenoDetected { t: f64, jumps: u64 },

    /// A signal left the quantizer's range set.
    #[error("quantizer saturated on node {node}: |z| = {magnitude:.6e} exceeds range {bound:.6e}{}", fmt_time(.t))]
    Saturation {
        node: usize,
        magnitude: f64,
        bound: f64,
        t: Option<f64>,
    },

    #[error("invalid arguments: {0}")]
    InvalidArguments(String),

    /// Protocol/quantizer pair without a certified contraction construction.
    #[error("unsupported protocol/quantizer combination: {0}")]
    UnsupportedCombination(String),

    /// Protocol weighting outside its admissible interval.
    #[error("invalid weighting: {0}")]
    InvalidWeighting(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// Jump operation applied in the wrong phase of the transmit/arrive cycle.
    #[error("wrong phase: {0}")]
    WrongPhase(String),

    /// Trace leaves the domain on which the certification curves are defined.
    #[error("certification domain error: {0}")]
    CertificationDomain(String),
}

fn fmt_time(t: &Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t:.6}"),
        None => String::new(),
    }
}
