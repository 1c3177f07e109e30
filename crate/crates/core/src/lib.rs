//! Unified near/far-field 3-D source localization from 1-D cone-angle
//! measurements, parameterized by azimuth, elevation and inverse range.
//!
//! The estimator casts the pseudo-linear constrained weighted least-squares
//! problem as a tightened semidefinite program, solved by the embedded
//! interior-point backend in [`conic`]. [`crlb`] evaluates the
//! Cramér-Rao bound, [`mle`] provides a Gauss-Newton reference estimator, and
//! [`montecarlo`] runs the noise and range sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conic;
pub mod crlb;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod measurement;
pub mod mle;
pub mod montecarlo;

pub use error::{Error, Result};
pub use geometry::{CartesianPoint, SourceMpr, UnitBearing};
pub use measurement::{Measurements, NoiseCovariance, Scenario, SensorArray};
