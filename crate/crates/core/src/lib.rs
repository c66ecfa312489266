//! Conformal histogram regression.
//!
//! A fitted conditional-quantile model is turned into a conditional histogram
//! over a fixed bin grid. For each feature point a nested family of
//! shortest-mass intervals is built over the levels `τ_t = t / T`, and a
//! held-out calibration set picks the level that delivers `1 - α` marginal
//! coverage.

pub mod baselines;
pub mod calibration;
pub mod cvplus;
pub mod data;
pub mod density;
pub mod error;
pub mod experiment;
pub mod interval;
pub mod metrics;
pub mod models;
pub mod persist;
pub mod selftest;
pub mod sequence;
pub mod synthetic;

pub use error::{ChrError, Result};
