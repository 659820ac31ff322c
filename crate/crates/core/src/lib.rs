//! Minimax optimal experimental design for time-series experiments with
//! spillover and carryover effects.
//!
//! The crate covers the full workflow:
//!
//! * [`design`] — decision-point designs and their exposure combinatorics;
//! * [`optim`] — worst-case risk objectives and the polynomial-time
//!   minimax design search;
//! * [`engine`] — the two-stage assignment mechanism and outcome models;
//! * [`estimator`] — Horvitz–Thompson estimators of direct and spillover
//!   effects;
//! * [`variance`] — exact variances, estimable upper bounds, conservative
//!   variance estimators, confidence intervals, and the carryover-order
//!   Wald test;
//! * [`oracle`] — brute-force enumeration of the randomization
//!   distribution on tiny instances, used to validate everything else;
//! * [`sim`] — Monte Carlo protocols (risk ranking, inference metrics,
//!   order identification, normality diagnostics).

pub mod design;
pub mod engine;
pub mod estimator;
pub mod optim;
pub mod oracle;
pub mod sim;
pub mod stats;
pub mod variance;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
