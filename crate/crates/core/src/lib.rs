//! Sequence labeling with a segmental CRF head and a CTC head over a shared
//! bidirectional LSTM encoder.
//!
//! The two heads consume the same encoder states and can be trained
//! separately or jointly through an interpolated loss. Everything runs in
//! double precision on the CPU, log-domain where probabilities are involved,
//! and every dynamic program ships with a brute-force enumeration oracle
//! (see [`oracle`]) so numerical agreement can be audited end to end via
//! [`selfcheck`].

pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod joint;
pub mod numerics;
pub mod oracle;
pub mod parallel;
pub mod scrf;
pub mod selfcheck;

pub use error::{Error, Result};

use ndarray::Array2;

/// Encoder output consumed by both heads: one row per (subsampled) frame,
/// `2 * hidden_dim` columns (forward and backward states concatenated).
pub type HiddenStates = Array2<f64>;
