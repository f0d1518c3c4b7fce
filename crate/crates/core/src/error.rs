//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used by every fallible function in the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by ensemble validation, the analysis engines, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An ensemble definition failed structural validation.
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    /// Variable- and check-side socket counts disagree on an edge type.
    #[error(
        "socket imbalance on edge type {edge_type}: variable side {variable_side:.6}, \
         check side {check_side:.6} (relative imbalance {imbalance:.3e}, limit {limit:.3e})"
    )]
    SocketImbalance {
        /// 1-based edge-type index.
        edge_type: usize,
        /// Socket count seen from the variable-node side.
        variable_side: f64,
        /// Socket count seen from the check-node side.
        check_side: f64,
        /// Relative imbalance between the two counts.
        imbalance: f64,
        /// Largest imbalance the caller allowed.
        limit: f64,
    },

    /// A check-node class has total degree below two and would act as a
    /// repetition constraint instead of a parity check.
    #[error("check class {class} has total degree {degree} (every check needs degree >= 2)")]
    DegreeOneCheck {
        /// 0-based check-class index.
        class: usize,
        /// Total degree of the offending class.
        degree: usize,
    },

    /// Two densities built on different grids were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A configuration value is outside its legal range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A quantity that must be positive (noise level, mean, mass) was not.
    #[error("non-positive value: {0}")]
    NonPositive(String),

    /// Bisection could not establish a bracket with one converging and one
    /// failing endpoint.
    #[error("threshold bracket failure: {0}")]
    BracketFailure(String),

    /// An ensemble template could not be instantiated or repaired.
    #[error("template error: {0}")]
    Template(String),

    /// Underlying file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON in an ensemble or template file.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
