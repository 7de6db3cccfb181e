//! Worst-case average value at risk under tail-dependence uncertainty.
//!
//! The crate models an aggregate loss whose dependence structure is a
//! distorted mix of a central copula and a set of candidate tail copulas,
//! and maximizes AV@R over the mixture weights with a projected stochastic
//! gradient stage followed by sample average approximation on a reduced
//! candidate set.

pub mod calib;
pub mod config;
pub mod copula;
pub mod dist;
pub mod dm;
pub mod distortion;
pub mod density;
pub mod error;
pub mod importance;
pub mod pipeline;
pub mod sa;
pub mod saa;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
