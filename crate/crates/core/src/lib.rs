//! American put pricing under meromorphic Lévy processes.
//!
//! The expiry is replaced by a sum of `k` independent exponential epochs with
//! rate `n` and stopping is restricted to that random grid. Because `X` at an
//! exponential time has an exponential-mixture law ([`spectral`]), every
//! step of the backward induction maps piecewise exponential polynomials to
//! piecewise exponential polynomials and can be carried out in closed form
//! ([`recursion`]). [`oracle`] holds independent engines used to check it.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod levy;
pub mod oracle;
pub mod pricing;
pub mod recursion;
pub mod scalar;
pub mod special;
pub mod spectral;

pub use config::PricingConfig;
pub use error::{Error, Result};
pub use levy::{BetaClass, HyperExpJd, LevyModel, Phase, Side};
pub use pricing::{recurse, PricingRun, ValueFunction};
