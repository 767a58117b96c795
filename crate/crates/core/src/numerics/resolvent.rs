//! Frequency-response evaluation `C (jωI − A)⁻¹ B + D` without explicit
//! inverses.
//!
//! [`freq_response`] performs a single LU-based linear solve. For the many
//! frequencies needed by gap computations, [`FreqResponder`] reduces `A`
//! to Hessenberg form once and then handles each frequency with an
//! `O(n²)` Givens sweep.

use crate::error::{LpvError, Result};
use crate::model::LtiSnapshot;
use crate::numerics::complexify;
use crate::{C64, CMat};

/// Evaluates `C (jωI − A)⁻¹ B + D` by a linear solve.
///
/// Errors if `jω` is numerically an eigenvalue of `A`.
pub fn freq_response(g: &LtiSnapshot, omega: f64) -> Result<CMat> {
    let n = g.a.nrows();
    if n == 0 {
        return Ok(complexify(&g.d));
    }
    let jw = C64::new(0.0, omega);
    let mut m = complexify(&g.a) * C64::new(-1.0, 0.0);
    for i in 0..n {
        m[(i, i)] += jw;
    }
    let b = complexify(&g.b);
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let lu = m.clone().lu();
    let x = lu
        .solve(&b)
        .ok_or(LpvError::SingularResolvent { omega })?;
    // A nearly singular resolvent may still "solve"; reject on residual.
    let resid = (&m * &x - &b).norm();
    if resid > 1e-6 * scale * x.norm().max(1.0) {
        return Err(LpvError::SingularResolvent { omega });
    }
    Ok(complexify(&g.c) * x + complexify(&g.d))
}

/// Batch frequency-response evaluator based on a one-time Hessenberg
/// reduction `A = P H Pᴴ`.
pub struct FreqResponder {
    /// Upper Hessenberg factor.
    h: CMat,
    /// `C P`.
    ct: CMat,
    /// `Pᴴ B`.
    bt: CMat,
    d: CMat,
    h_scale: f64,
}

impl FreqResponder {
    pub fn new(g: &LtiSnapshot) -> Self {
        let n = g.a.nrows();
        if n == 0 {
            return FreqResponder {
                h: CMat::zeros(0, 0),
                ct: CMat::zeros(g.c.nrows(), 0),
                bt: CMat::zeros(0, g.b.ncols()),
                d: complexify(&g.d),
                h_scale: 1.0,
            };
        }
        let hess = complexify(&g.a).hessenberg();
        let (p, h) = hess.unpack();
        let h_scale = h.norm().max(f64::MIN_POSITIVE);
        FreqResponder {
            ct: complexify(&g.c) * &p,
            bt: p.adjoint() * complexify(&g.b),
            h,
            d: complexify(&g.d),
            h_scale,
        }
    }

    /// Response at a single frequency, `O(n²·(1 + n_u))`.
    pub fn eval(&self, omega: f64) -> Result<CMat> {
        let n = self.h.nrows();
        if n == 0 {
            return Ok(self.d.clone());
        }
        let jw = C64::new(0.0, omega);
        // m = jωI − H stays upper Hessenberg; one Givens rotation per
        // column triangularizes it.
        let mut m = &self.h * C64::new(-1.0, 0.0);
        for i in 0..n {
            m[(i, i)] += jw;
        }
        let mut rhs = self.bt.clone();
        let nu = rhs.ncols();
        let tiny = 1e-12 * self.h_scale;
        for i in 0..n - 1 {
            let a = m[(i, i)];
            let b = m[(i + 1, i)];
            let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
            if r <= tiny {
                return Err(LpvError::SingularResolvent { omega });
            }
            let (ca, cb) = (a.conj() / C64::new(r, 0.0), b.conj() / C64::new(r, 0.0));
            for j in i..n {
                let x = m[(i, j)];
                let y = m[(i + 1, j)];
                m[(i, j)] = ca * x + cb * y;
                m[(i + 1, j)] = -b / C64::new(r, 0.0) * x + a / C64::new(r, 0.0) * y;
            }
            for j in 0..nu {
                let x = rhs[(i, j)];
                let y = rhs[(i + 1, j)];
                rhs[(i, j)] = ca * x + cb * y;
                rhs[(i + 1, j)] = -b / C64::new(r, 0.0) * x + a / C64::new(r, 0.0) * y;
            }
        }
        // Back substitution on the triangularized system.
        for i in (0..n).rev() {
            let piv = m[(i, i)];
            if piv.norm() <= tiny {
                return Err(LpvError::SingularResolvent { omega });
            }
            for j in 0..nu {
                let mut s = rhs[(i, j)];
                for k in i + 1..n {
                    s -= m[(i, k)] * rhs[(k, j)];
                }
                rhs[(i, j)] = s / piv;
            }
        }
        Ok(&self.ct * rhs + &self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::eig::{eig_decompose, COND_MAX_DEFAULT};
    use crate::Mat;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn snapshot(a: Mat, b: Mat, c: Mat, d: Mat) -> LtiSnapshot {
        LtiSnapshot {
            rho: 0.0,
            a,
            b,
            c,
            d,
        }
    }

    #[test]
    fn first_order_dc_gain() {
        let g = snapshot(
            Mat::from_row_slice(1, 1, &[-1.0]),
            Mat::from_row_slice(1, 1, &[1.0]),
            Mat::from_row_slice(1, 1, &[1.0]),
            Mat::from_row_slice(1, 1, &[0.0]),
        );
        let r = freq_response(&g, 0.0).unwrap();
        assert!((r[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn feedthrough_only() {
        let g = snapshot(
            Mat::from_row_slice(1, 1, &[-1.0]),
            Mat::from_row_slice(1, 1, &[0.0]),
            Mat::zeros(1, 1),
            Mat::from_row_slice(1, 1, &[2.5]),
        );
        for &w in &[0.0, 0.1, 10.0] {
            let r = freq_response(&g, w).unwrap();
            assert!((r[(0, 0)] - C64::new(2.5, 0.0)).norm() < 1e-14);
        }
    }

    /// Partial-fraction oracle: G(jω) = Σ (C v_i)(w_i B)/(jω − λ_i) + D
    /// with w_i the rows of V⁻¹.
    fn partial_fraction(g: &LtiSnapshot, omega: f64) -> CMat {
        let dec = eig_decompose(&g.a, COND_MAX_DEFAULT).unwrap();
        let vinv = dec.vectors.clone().try_inverse().unwrap();
        let cb = complexify(&g.c) * &dec.vectors;
        let wb = vinv * complexify(&g.b);
        let mut out = complexify(&g.d);
        let jw = C64::new(0.0, omega);
        for i in 0..dec.values.len() {
            let gain = C64::new(1.0, 0.0) / (jw - dec.values[i]);
            out += cb.column(i) * wb.row(i) * gain;
        }
        out
    }

    #[test]
    fn matches_partial_fraction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 8;
        let a = Mat::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5) - Mat::identity(n, n) * 3.0;
        let b = Mat::from_fn(n, 2, |_, _| rng.gen::<f64>() - 0.5);
        let c = Mat::from_fn(2, n, |_, _| rng.gen::<f64>() - 0.5);
        let d = Mat::from_fn(2, 2, |_, _| rng.gen::<f64>() - 0.5);
        let g = snapshot(a, b, c, d);
        let responder = FreqResponder::new(&g);
        for &w in &[0.0, 0.03, 0.7, 5.0, 42.0] {
            let oracle = partial_fraction(&g, w);
            let lu = freq_response(&g, w).unwrap();
            let hess = responder.eval(w).unwrap();
            assert!((&lu - &oracle).norm() < 1e-8 * oracle.norm().max(1.0));
            assert!((&hess - &oracle).norm() < 1e-8 * oracle.norm().max(1.0));
        }
    }

    #[test]
    fn resolvent_at_eigenvalue_errors() {
        // A = [[0, 1], [-1, 0]] has eigenvalues ±j; ω = 1 hits one.
        let g = snapshot(
            Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
        );
        assert!(matches!(
            freq_response(&g, 1.0),
            Err(LpvError::SingularResolvent { .. })
        ));
        let responder = FreqResponder::new(&g);
        assert!(matches!(
            responder.eval(1.0),
            Err(LpvError::SingularResolvent { .. })
        ));
    }

    #[test]
    fn parallel_sum_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mk = |rng: &mut ChaCha8Rng| {
            let a = Mat::from_fn(3, 3, |_, _| rng.gen::<f64>() - 0.5) - Mat::identity(3, 3) * 2.0;
            let b = Mat::from_fn(3, 1, |_, _| rng.gen::<f64>() - 0.5);
            let c = Mat::from_fn(1, 3, |_, _| rng.gen::<f64>() - 0.5);
            let d = Mat::from_fn(1, 1, |_, _| rng.gen::<f64>() - 0.5);
            snapshot(a, b, c, d)
        };
        let g1 = mk(&mut rng);
        let g2 = mk(&mut rng);
        // Block-diagonal parallel interconnection.
        let mut a = Mat::zeros(6, 6);
        a.view_mut((0, 0), (3, 3)).copy_from(&g1.a);
        a.view_mut((3, 3), (3, 3)).copy_from(&g2.a);
        let mut b = Mat::zeros(6, 1);
        b.view_mut((0, 0), (3, 1)).copy_from(&g1.b);
        b.view_mut((3, 0), (3, 1)).copy_from(&g2.b);
        let mut c = Mat::zeros(1, 6);
        c.view_mut((0, 0), (1, 3)).copy_from(&g1.c);
        c.view_mut((0, 3), (1, 3)).copy_from(&g2.c);
        let d = &g1.d + &g2.d;
        let sum = snapshot(a, b, c, d);
        for &w in &[0.01, 0.5, 3.0] {
            let lhs = freq_response(&sum, w).unwrap();
            let rhs = freq_response(&g1, w).unwrap() + freq_response(&g2, w).unwrap();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }
}
