//! Dense kernels used by the rate-matrix algebra.

mod eigen;
mod expm;

pub use eigen::{eigenvalues, hessenberg, EigensolveFailure, DEFLATION_TOL};
pub use expm::{expm, norm_1, norm_inf};
