//! Desk-scale Monte Carlo laboratory for Brownian local time increments.
//!
//! The crate simulates Brownian paths, estimates the local time field
//! `L^x_t` on a spatial grid, evaluates centered increment statistics whose
//! laws converge to mixed normals, and verifies the Monte Carlo side
//! against exact oracles: closed-form kernels, certified quadrature, and
//! permutation-sum moment formulas at exponential times.

pub mod calibration;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod kac;
pub mod kernels;
pub mod local_time;
pub mod parallel;
pub mod path;
pub mod quad;
pub mod statistics;

pub use error::{Error, Result};
pub use estimate::MomentEstimate;
pub use local_time::{GridSpec, LocalTimeField};
pub use path::{ExponentialClock, Path};
pub use quad::QuadratureResult;
