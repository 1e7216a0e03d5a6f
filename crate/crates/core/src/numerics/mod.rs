//! Self-contained numerical kernels: dense matrices, Cholesky factorizations,
//! the modified Bessel function of the second kind, Nelder-Mead, and the
//! reference distributions used by the diagnostics.

mod bessel;
mod cholesky;
mod distributions;
mod matrix;
mod optimize;

pub use bessel::{bessel_k, bessel_k_flagged, ln_bessel_k};
pub(crate) use bessel::BesselOrder;
pub use cholesky::{cholesky, pivoted_cholesky, CholeskyFactor, PivotedCholeskyFactor};
pub use distributions::{
    f_cdf, f_sf, std_normal_cdf, std_normal_pdf, std_normal_quantile, student_t_cdf,
    student_t_pdf, student_t_quantile,
};
pub use matrix::{dot, DenseMatrix};
pub use optimize::{nelder_mead, OptimizeResult, OptimizerOptions};
