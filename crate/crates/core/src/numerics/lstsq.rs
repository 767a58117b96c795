//! Complex least squares via the singular value decomposition.

use crate::error::{LpvError, Result};
use crate::{C64, CMat};

/// Solution of `min ‖M X − R‖_F`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: CMat,
    /// Set when `M` is rank deficient (the minimum-norm solution is
    /// returned in that case).
    pub rank_deficient: bool,
    /// Numerical rank of `M`.
    pub rank: usize,
}

/// Minimizes `‖M X − R‖_F` over complex `X`; returns the minimum-norm
/// solution with a rank-deficiency flag when `M` lacks full column rank.
pub fn complex_lstsq(m: &CMat, r: &CMat) -> Result<LstsqSolution> {
    if m.nrows() != r.nrows() {
        return Err(LpvError::Internal(format!(
            "complex_lstsq: M has {} rows but R has {}",
            m.nrows(),
            r.nrows()
        )));
    }
    let ncols = m.ncols();
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let sv = &svd.singular_values;

    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let tol = smax * (m.nrows().max(ncols) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();

    // X = V Σ⁺ U^H R restricted to the numerically nonzero singular values.
    let uhr = u.adjoint() * r;
    let mut scaled = CMat::zeros(sv.len(), r.ncols());
    for i in 0..rank {
        let inv = C64::new(1.0 / sv[i], 0.0);
        for j in 0..r.ncols() {
            scaled[(i, j)] = uhr[(i, j)] * inv;
        }
    }
    let x = vt.adjoint() * scaled;

    Ok(LstsqSolution {
        x,
        rank_deficient: rank < ncols,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::complexify;
    use crate::Mat;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cmat(rows: usize, cols: usize, entries: &[(f64, f64)]) -> CMat {
        CMat::from_fn(rows, cols, |i, j| {
            let (re, im) = entries[i * cols + j];
            C64::new(re, im)
        })
    }

    #[test]
    fn square_invertible_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = complexify(&Mat::from_fn(4, 4, |_, _| rng.gen::<f64>() + 0.5));
        let sol = complex_lstsq(&m, &m).unwrap();
        assert!(!sol.rank_deficient);
        assert!((sol.x - CMat::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn one_dimensional_normal_equation() {
        // M = [[1],[i]], R = [[i],[-1]]: (M^H M) X = M^H R gives
        // 2 X = i + (-i)(-1) = 2i, so X = i.
        let m = cmat(2, 1, &[(1.0, 0.0), (0.0, 1.0)]);
        let r = cmat(2, 1, &[(0.0, 1.0), (-1.0, 0.0)]);
        let sol = complex_lstsq(&m, &r).unwrap();
        assert!((sol.x[(0, 0)] - C64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn residual_orthogonal_to_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = CMat::from_fn(8, 3, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let r = CMat::from_fn(8, 2, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let sol = complex_lstsq(&m, &r).unwrap();
        let resid = &m * &sol.x - &r;
        // Normal equations: M^H (M X − R) = 0.
        let ortho = m.adjoint() * resid;
        assert!(ortho.norm() < 1e-10 * (m.norm() * r.norm()).max(1.0));
    }

    #[test]
    fn rank_deficiency_flagged_minimum_norm() {
        // Two identical columns: rank 1.
        let m = cmat(2, 2, &[(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, 1.0)]);
        let r = cmat(2, 1, &[(1.0, 0.0), (0.0, 1.0)]);
        let sol = complex_lstsq(&m, &r).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 1);
        // Minimum-norm solution splits the coefficient evenly.
        assert!((sol.x[(0, 0)] - sol.x[(1, 0)]).norm() < 1e-12);
    }
}
