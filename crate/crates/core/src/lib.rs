//! Fusion of sparse station measurements with a gridded simulator field.
//!
//! The actual field is modelled as a Gaussian process given the simulated
//! field, with a regression mean on the simulated intensity and a composite
//! correlation (per-axis Matérn in rotated coordinates times a Gaussian
//! kernel on intensity, plus a nugget). Regression coefficients and the
//! process variance are integrated out under a conjugate normal
//! inverse-gamma prior, which leaves a closed-form posterior for the field
//! once the correlation hyperparameters are fixed at their posterior mode.

pub mod artifact;
pub mod cli;
pub mod covariance;
pub mod dataio;
pub mod diagnostics;
mod error;
pub mod inference;
pub mod numerics;
pub mod parallel;
pub mod prediction;
pub mod synthetic;

pub use error::{Error, Result};
