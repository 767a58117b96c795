//! Continuous-time Lyapunov solver (Bartels–Stewart family).
//!
//! Solves `AᵀX + XA + Q = 0` for Hurwitz `A` via the complex Schur form
//! of `A` and column-wise forward substitution on the triangular system.

use crate::error::{LpvError, Result};
use crate::numerics::complexify;
use crate::{C64, CMat, CVec, Mat};

/// Solves `AᵀX + XA + Q = 0` for symmetric `X`.
///
/// `A` must be Hurwitz (all eigenvalues strictly in the left half plane);
/// otherwise the offending eigenvalue is reported. `Q` is symmetrized on
/// input. The result is exactly symmetric.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(LpvError::Internal(format!(
            "solve_lyapunov dimension mismatch: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }

    // A = U T U^H with T upper triangular; the equation becomes
    // T^H Y + Y T = −U^H Q U with Y = U^H X U.
    let (u, t) = complexify(a).schur().unpack();
    for i in 0..n {
        let lambda = t[(i, i)];
        if lambda.re >= 0.0 {
            return Err(LpvError::NotHurwitz {
                eigenvalue: format!("{lambda}"),
            });
        }
    }

    let q_sym = (q + q.transpose()) * 0.5;
    let qt = u.adjoint() * complexify(&q_sym) * &u;

    // Column j: (T^H + t_jj I) y_j = −q̃_j − Σ_{i<j} t_ij y_i.
    // T^H is lower triangular, so each column solves by forward
    // substitution; diagonal entries conj(λ_i) + λ_j have negative real
    // part for a Hurwitz spectrum and never vanish.
    let mut y = CMat::zeros(n, n);
    let mut rhs = CVec::zeros(n);
    for j in 0..n {
        for r in 0..n {
            rhs[r] = -qt[(r, j)];
        }
        for i in 0..j {
            let tij = t[(i, j)];
            if tij != C64::new(0.0, 0.0) {
                for r in 0..n {
                    rhs[r] -= tij * y[(r, i)];
                }
            }
        }
        let tjj = t[(j, j)];
        for r in 0..n {
            let mut s = rhs[r];
            for c in 0..r {
                // (T^H)[r, c] = conj(T[c, r])
                s -= t[(c, r)].conj() * y[(c, j)];
            }
            y[(r, j)] = s / (t[(r, r)].conj() + tjj);
        }
    }

    let x = (&u * y * u.adjoint()).map(|z| z.re);
    Ok((&x + x.transpose()) * 0.5)
}

/// Relative residual `‖AᵀX + XA + Q‖_F / (2‖A‖_F‖X‖_F + ‖Q‖_F)` used by
/// callers to confirm solution quality.
pub fn lyapunov_residual(a: &Mat, q: &Mat, x: &Mat) -> f64 {
    let r = a.transpose() * x + x * a + q;
    let denom = 2.0 * a.norm() * x.norm() + q.norm();
    if denom == 0.0 {
        r.norm()
    } else {
        r.norm() / denom
    }
}
