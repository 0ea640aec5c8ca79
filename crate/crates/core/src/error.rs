//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by tree construction, class operations, the correlator cache
/// and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    /// A `(g, n, m, d)` specification that does not describe a stable moduli
    /// space or a meaningful class.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    /// A decorated tree violating one of the structural invariants.
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    /// Malformed textual input (rationals, JSON payloads, cache lines).
    #[error("parse error: {0}")]
    Parse(String),
    /// An operation that is only defined on psi-free classes met a psi factor.
    #[error("operation requires a psi-free class: {0}")]
    PsiPresent(String),
    /// An exact polynomial division left a nonzero remainder.
    #[error("polynomial division left a nonzero remainder: {0}")]
    NotDivisible(String),
    /// Two caches disagree on the value of the same correlator.
    #[error("cache conflict: {0}")]
    CacheConflict(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
