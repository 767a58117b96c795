//! Eigendecomposition of real matrices with deterministic eigenvector
//! normalization.
//!
//! The decomposition is computed via the complex Schur form: `A = Q T Q^H`
//! with `T` upper triangular, followed by triangular back-substitution for
//! the eigenvectors. Output conventions:
//!
//! * eigenvalues sorted by `(Re, |Im|)`, with the positive-imaginary member
//!   of each conjugate pair first, so conjugate pairs are adjacent;
//! * eigenvectors have unit 2-norm and a fixed phase (largest-magnitude
//!   entry real and positive);
//! * conjugate pairs are exact: the second member's eigenvalue and vector
//!   are the conjugates of the first's;
//! * eigenvalues with relative imaginary part below roundoff are snapped to
//!   the real axis and given real eigenvectors.

use crate::error::{LpvError, Result};
use crate::numerics::{complexify, cond2_complex, spectral_norm};
use crate::{C64, CMat, CVec, Mat};

/// Result of [`eig_decompose`].
#[derive(Debug, Clone)]
pub struct EigDecomp {
    /// Eigenvalues, conjugate pairs adjacent (positive imaginary part
    /// first), sorted by `(Re, |Im|)`.
    pub values: Vec<C64>,
    /// Unit-norm eigenvectors, column `i` belongs to `values[i]`.
    pub vectors: CMat,
    /// Condition number of the eigenvector matrix.
    pub cond_v: f64,
    /// Spectral norm of the input, reused by residual checks.
    pub a_norm: f64,
}

/// Default bound on the eigenvector condition number beyond which a matrix
/// is declared near-defective.
pub const COND_MAX_DEFAULT: f64 = 1e12;

/// Relative imaginary-part threshold below which an eigenvalue of a real
/// matrix is treated as real.
const REAL_SNAP_RTOL: f64 = 1e-12;

/// Computes eigenvalues and eigenvectors of a real square matrix.
///
/// Fails with [`LpvError::NearDefective`] if the eigenvector matrix
/// condition number exceeds `cond_max`, naming the tightest eigenvalue
/// cluster as the likely cause.
pub fn eig_decompose(a: &Mat, cond_max: f64) -> Result<EigDecomp> {
    if a.nrows() != a.ncols() {
        return Err(LpvError::Internal(format!(
            "eig_decompose requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let a_norm = spectral_norm(a);
    if n == 0 {
        return Ok(EigDecomp {
            values: vec![],
            vectors: CMat::zeros(0, 0),
            cond_v: 1.0,
            a_norm,
        });
    }

    let (q, t) = complexify(a).schur().unpack();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let smlnum = f64::EPSILON * scale;

    let mut items: Vec<(C64, CVec)> = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = t[(i, i)];
        // Solve (T[0..i,0..i] − λI) w = −T[0..i, i] with w_i = 1 by
        // backward substitution; guard vanishing pivots (clustered
        // eigenvalues) with a roundoff-level floor.
        let mut w = CVec::zeros(n);
        w[i] = C64::new(1.0, 0.0);
        for j in (0..i).rev() {
            let mut s = t[(j, i)];
            for k in (j + 1)..i {
                s += t[(j, k)] * w[k];
            }
            let mut piv = t[(j, j)] - lambda;
            if piv.norm() < smlnum {
                piv = C64::new(smlnum, 0.0);
            }
            w[j] = -s / piv;
        }
        let v = &q * w;
        let v = &v / C64::new(v.norm(), 0.0);
        items.push((lambda, v));
    }

    snap_and_pair(&mut items, a_norm);
    for (_, v) in items.iter_mut() {
        fix_phase(v);
    }
    enforce_conjugate_vectors(&mut items);

    // Deterministic order: by real part, then |Im|, positive member first.
    items.sort_by(|(l1, _), (l2, _)| {
        l1.re
            .partial_cmp(&l2.re)
            .unwrap()
            .then(l1.im.abs().partial_cmp(&l2.im.abs()).unwrap())
            .then(l2.im.partial_cmp(&l1.im).unwrap())
    });

    let values: Vec<C64> = items.iter().map(|(l, _)| *l).collect();
    let mut vectors = CMat::zeros(n, n);
    for (i, (_, v)) in items.iter().enumerate() {
        vectors.set_column(i, v);
    }

    let cond_v = cond2_complex(&vectors);
    if !(cond_v <= cond_max) {
        return Err(LpvError::NearDefective {
            point: None,
            cond: cond_v,
            max: cond_max,
            near: format!("{}", tightest_cluster(&values)),
        });
    }

    Ok(EigDecomp {
        values,
        vectors,
        cond_v,
        a_norm,
    })
}

impl EigDecomp {
    /// Largest relative residual `‖A v_i − λ_i v_i‖ / ‖A‖` over all pairs.
    pub fn max_residual(&self, a: &Mat) -> f64 {
        let ac = complexify(a);
        let mut worst: f64 = 0.0;
        for i in 0..self.values.len() {
            let v = self.vectors.column(i);
            let r = (&ac * v - v * self.values[i]).norm();
            worst = worst.max(r);
        }
        if self.a_norm == 0.0 {
            worst
        } else {
            worst / self.a_norm
        }
    }
}

/// Snaps roundoff-level imaginary parts to zero and makes conjugate pairs
/// exact by averaging the two members.
fn snap_and_pair(items: &mut [(C64, CVec)], a_norm: f64) {
    let tol = REAL_SNAP_RTOL * a_norm.max(f64::MIN_POSITIVE);
    for (l, _) in items.iter_mut() {
        if l.im.abs() <= tol {
            l.im = 0.0;
        }
    }
    // Pair each positive-imaginary eigenvalue with its nearest negative
    // conjugate and replace both by the exact conjugate pair.
    let n = items.len();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] || items[i].0.im <= 0.0 {
            continue;
        }
        let li = items[i].0;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if used[j] || j == i || items[j].0.im >= 0.0 {
                continue;
            }
            let d = (items[j].0 - li.conj()).norm();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            let merged = C64::new(
                0.5 * (li.re + items[j].0.re),
                0.5 * (li.im - items[j].0.im),
            );
            items[i].0 = merged;
            items[j].0 = merged.conj();
            used[i] = true;
            used[j] = true;
        }
    }
}

/// Rotates the phase so the largest-magnitude entry is real and positive;
/// vectors of real eigenvalues additionally have their residual imaginary
/// parts dropped.
fn fix_phase(v: &mut CVec) {
    let mut best = 0usize;
    let mut best_mag = -1.0f64;
    for (idx, x) in v.iter().enumerate() {
        let m = x.norm();
        if m > best_mag {
            best_mag = m;
            best = idx;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best] / C64::new(best_mag, 0.0);
        let rot = phase.conj();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// Replaces each conjugate-pair partner vector by the exact conjugate of
/// the positive-imaginary member, and realifies vectors of real
/// eigenvalues.
fn enforce_conjugate_vectors(items: &mut [(C64, CVec)]) {
    let n = items.len();
    let mut claimed = vec![false; n];
    for i in 0..n {
        if items[i].0.im == 0.0 {
            // Real eigenvalue of a real matrix: after the phase fix the
            // vector is real up to roundoff.
            let re = items[i].1.map(|x| C64::new(x.re, 0.0));
            let norm = re.norm();
            if norm > 0.0 {
                items[i].1 = re / C64::new(norm, 0.0);
            }
        }
    }
    for i in 0..n {
        if claimed[i] || items[i].0.im <= 0.0 {
            continue;
        }
        let li = items[i].0;
        for j in 0..n {
            if claimed[j] || j == i {
                continue;
            }
            if items[j].0 == li.conj() && items[j].0.im < 0.0 {
                items[j].1 = items[i].1.map(|x| x.conj());
                claimed[i] = true;
                claimed[j] = true;
                break;
            }
        }
    }
}

/// Midpoint of the two closest eigenvalues — the plausible defective
/// cluster to report.
fn tightest_cluster(values: &[C64]) -> C64 {
    let mut best = (C64::new(0.0, 0.0), f64::INFINITY);
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let d = (values[i] - values[j]).norm();
            if d < best.1 {
                best = ((values[i] + values[j]) * C64::new(0.5, 0.0), d);
            }
        }
    }
    if best.1.is_finite() {
        best.0
    } else {
        values.first().copied().unwrap_or(C64::new(0.0, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_matrix() {
        let a = Mat::from_diagonal(&crate::Vec64::from_vec(vec![-1.0, -2.0]));
        let d = eig_decompose(&a, COND_MAX_DEFAULT).unwrap();
        assert_eq!(d.values, vec![C64::new(-2.0, 0.0), C64::new(-1.0, 0.0)]);
        // Eigenvectors are the standard basis (phase makes them +e_i).
        assert!((d.vectors[(1, 0)].re - 1.0).abs() < 1e-15);
        assert!((d.vectors[(0, 1)].re - 1.0).abs() < 1e-15);
        assert!(d.max_residual(&a) < 1e-12);
    }

    #[test]
    fn rotation_generator_gives_conjugate_pair() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let d = eig_decompose(&a, COND_MAX_DEFAULT).unwrap();
        assert_eq!(d.values.len(), 2);
        assert_eq!(d.values[0], d.values[1].conj());
        assert!(d.values[0].im > 0.0);
        assert!((d.values[0] - C64::new(0.0, 1.0)).norm() < 1e-12);
        // Conjugate eigenvectors, exactly.
        for r in 0..2 {
            assert_eq!(d.vectors[(r, 1)], d.vectors[(r, 0)].conj());
        }
        assert!(d.max_residual(&a) < 1e-10);
    }

    #[test]
    fn random_matrix_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = Mat::from_fn(10, 10, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let d = eig_decompose(&a, COND_MAX_DEFAULT).unwrap();
            assert!(
                d.max_residual(&a) <= 1e-10,
                "residual {} too large",
                d.max_residual(&a)
            );
            for i in 0..10 {
                assert!((d.vectors.column(i).norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvalues_invariant_under_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Mat::from_fn(8, 8, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let t = Mat::from_fn(8, 8, |i, j| {
            if i == j {
                1.0
            } else {
                0.3 * (rng.gen::<f64>() - 0.5)
            }
        });
        let ti = t.clone().try_inverse().unwrap();
        let b = &ti * &a * &t;
        let da = eig_decompose(&a, COND_MAX_DEFAULT).unwrap();
        let db = eig_decompose(&b, COND_MAX_DEFAULT).unwrap();
        // Same sort order on both sides makes the multisets comparable
        // entry by entry.
        for (x, y) in da.values.iter().zip(db.values.iter()) {
            assert!((x - y).norm() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn jordan_block_reports_near_defective() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let err = eig_decompose(&a, COND_MAX_DEFAULT).unwrap_err();
        match err {
            LpvError::NearDefective { cond, near, .. } => {
                assert!(cond > COND_MAX_DEFAULT);
                assert!(near.contains("-1"), "cluster report was {near}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn phase_convention_largest_entry_real_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mat::from_fn(6, 6, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let d = eig_decompose(&a, COND_MAX_DEFAULT).unwrap();
        for i in 0..6 {
            let v = d.vectors.column(i);
            let mut best = 0usize;
            let mut mag = -1.0;
            for (idx, x) in v.iter().enumerate() {
                if x.norm() > mag {
                    mag = x.norm();
                    best = idx;
                }
            }
            assert!(v[best].re > 0.0);
            assert!(
                v[best].im.abs() <= 1e-12 * mag.max(1.0),
                "largest entry not real: {}",
                v[best]
            );
        }
    }
}
