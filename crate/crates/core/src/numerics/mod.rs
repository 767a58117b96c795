//! Shared numeric kernels: eigendecomposition, Lyapunov solver, complex
//! least squares, cubic splines, frequency-response solvers and the
//! matrix exponential.

pub mod eig;
pub mod expm;
pub mod lstsq;
pub mod lyapunov;
pub mod resolvent;
pub mod spline;

pub use eig::{eig_decompose, EigDecomp, COND_MAX_DEFAULT};
pub use expm::expm;
pub use lstsq::{complex_lstsq, LstsqSolution};
pub use lyapunov::solve_lyapunov;
pub use resolvent::{freq_response, FreqResponder};
pub use spline::CubicSpline;

use crate::{C64, CMat, Mat};

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values()[0]
}

/// Condition number of a complex matrix in the 2-norm.
pub fn cond2_complex(a: &CMat) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let smax = sv[0];
    let smin = sv[sv.len() - 1];
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Lifts a real matrix to a complex one.
pub fn complexify(a: &Mat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}
