//! Crate-wide error type and result alias.
//!
//! Every fallible operation returns [`PricingError`]. Variants are grouped by
//! failure class rather than by module so callers can match on what went
//! wrong (bad input, numerical breakdown, resource limit, I/O) without
//! knowing which layer raised it.

use thiserror::Error;

/// Unified error type for model construction, risk evaluation, grid
/// iteration, analytics, and the experiment runner.
#[derive(Debug, Error)]
pub enum PricingError {
    /// A constructor or operation was given a parameter outside its domain.
    #[error("invalid parameter: {message}")]
    InvalidParameter { message: String },

    /// A user-supplied function produced a non-finite value where a finite
    /// one is required (e.g. a payoff evaluated at a scenario atom).
    #[error("evaluation error: {message}")]
    Evaluation { message: String },

    /// The hedge optimizer expanded its bracket past the hard cap on |theta|,
    /// which signals an ill-posed (unbounded-below) hedging problem.
    #[error("hedge optimization diverged: {message}")]
    Divergence { message: String },

    /// A requested computation exceeds a configured resource cap.
    #[error("resource limit exceeded: {message}")]
    Resource { message: String },

    /// The grid iteration produced a non-finite value.
    #[error("iteration failed at step {step}, node {node}: {message}")]
    Iteration {
        step: usize,
        node: usize,
        message: String,
    },

    /// Implied-volatility sentinel: the requested price cannot be produced by
    /// any volatility in the search bracket. Carries the attainable range.
    #[error(
        "price {price} is outside the attainable range [{attainable_min}, {attainable_max}]"
    )]
    PriceOutOfRange {
        price: f64,
        attainable_min: f64,
        attainable_max: f64,
    },

    /// A config file failed to parse or referenced an unknown key.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// A result file (CSV) is malformed at the named line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An internal cross-check failed; indicates a bug, not bad input.
    #[error("invariant violation: {message}")]
    Invariant { message: String },

    /// File-system failure while reading configs or writing results.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PricingError>;

impl PricingError {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        PricingError::InvalidParameter {
            message: message.into(),
        }
    }

    pub(crate) fn evaluation(message: impl Into<String>) -> Self {
        PricingError::Evaluation {
            message: message.into(),
        }
    }
}
