//! Core library for simulating and certifying tracking control over a shared,
//! quantized, delayed network.
//!
//! The toolkit is organized bottom-up:
//!
//! - [`hybrid`]: hybrid time domains, arcs, and a deterministic flow/jump
//!   event loop (fixed-step RK4 with bisected event times).
//! - [`quantize`]: zoom, box, and uniform quantizers with sector verification.
//! - [`schedule`]: round-robin and largest-error scheduling protocols plus
//!   their exponential-contraction (UGES) certificates.
//! - [`tradeoff`]: the Riccati-type timing curves and the solver for the
//!   maximum allowable transmission interval and delay.
//! - [`model`]: the closed-loop network model, its jump maps, the simulator,
//!   and the trace certifier.
//! - [`manipulator`]: a two-link-style manipulator worked example with its
//!   published constants and figure reproduction helpers.
//!
//! Everything is deterministic: randomized routines take explicit seeds, and
//! repeated runs produce bit-identical results.

pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod manipulator;
pub mod model;
pub mod quantize;
pub mod schedule;
pub mod tradeoff;

pub use error::CoreError;
