//! Numerical toolkit relating the annealed Franz-Parisi potential of a
//! Gaussian additive model (GAM) `Y = sqrt(lambda) * X + Z` to the power of
//! low-degree polynomial estimators.
//!
//! The crate computes, at desk scale and with exact arithmetic wherever the
//! priors allow it:
//!
//! * overlap distributions of two prior draws, their quantiles `q(D)` and
//!   discrete log-PMF differences ([`overlap`]),
//! * the annealed FP potential through the identity
//!   `lambda*q + F(q) = -log P(overlap = q)` and a Monte-Carlo quenched FP
//!   evaluator for a truncated sparse 3-tensor model ([`fp`]),
//! * joint cumulants by the set-partition and recursion formulas and the
//!   cumulant upper bound on the degree-D squared correlation ([`cumulants`]),
//! * Hermite-polynomial estimators and the overlap-only lower bound on the
//!   degree-D correlation ([`estimators`]),
//! * an exact low-degree MMSE oracle for finite-support priors ([`oracle`]),
//! * modified Bessel functions, the Gaussian inner-product density and local
//!   CLT checks ([`specfun`]),
//! * packaged experiments: quantile scaling, equivalence sweeps, diagonal
//!   thresholding and the quenched counterexample ([`applications`]).
//!
//! All randomness flows through explicitly seeded, splittable generators so
//! every result is reproducible bit for bit.

pub mod applications;
pub mod cumulants;
pub mod estimators;
pub mod fp;
pub mod multi_index;
pub mod oracle;
pub mod overlap;
pub mod priors;
pub mod rng;
pub mod specfun;

pub use multi_index::MultiIndex;
pub use priors::{GamInstance, PriorModel, SignalSample};

/// Errors shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameters or malformed input.
    #[error("validation: {0}")]
    Validation(String),
    /// A compute budget (enumeration size, degree cap, basis size) would be exceeded.
    #[error("budget: {0}")]
    Budget(String),
    /// A query outside the mathematical domain of an operation.
    #[error("domain: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub(crate) fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
