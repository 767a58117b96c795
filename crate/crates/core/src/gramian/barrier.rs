//! Log-det barrier interior-point solver for the linear-objective LMI
//! half-steps of the alternating Gramian refinement.
//!
//! The variable is a symmetric matrix pair `(Y0, Y1)` defining the affine
//! Gramian `X(ρ) = Y0 + ρ Y1`. Every constraint block has the common form
//!
//! `S(Y) = s0 + sign · (c_nu · Y1 + Kᵀ X(ρ) + X(ρ) K) ≻ 0`
//!
//! which covers the observability/controllability inequalities (`sign = −1`,
//! `K = A` or `Aᵀ`, `s0 = −Q − margin·I`) and the positive-definiteness
//! floors (`sign = +1`, `K = I/2`, `s0 = −floor·I`). The objective is
//! `trace(Y0 W0) + trace(Y1 W1)`, linear in the variables.

use crate::Mat;
use rayon::prelude::*;

pub(crate) struct Block {
    pub k_mat: Mat,
    pub c_nu: f64,
    pub rho: f64,
    pub sign: f64,
    pub s0: Mat,
}

pub(crate) struct HalfStep {
    pub n: usize,
    pub blocks: Vec<Block>,
    pub w0: Mat,
    pub w1: Mat,
    /// Relative duality-gap target.
    pub gap_tol: f64,
}

/// Symmetric-matrix basis index: `a < d` addresses entry (i, j) of `Y0`,
/// `a ≥ d` the same entry of `Y1`, with `d = n(n+1)/2` and (i ≤ j)
/// enumerated row-major over the upper triangle.
fn basis_entry(n: usize, mut a: usize) -> (bool, usize, usize) {
    let d = n * (n + 1) / 2;
    let first = a < d;
    if !first {
        a -= d;
    }
    let mut i = 0;
    let mut row_len = n;
    while a >= row_len {
        a -= row_len;
        i += 1;
        row_len -= 1;
    }
    (first, i, i + a)
}

fn pack(n: usize, y0: &Mat, y1: &Mat) -> Vec<f64> {
    let d = n * (n + 1) / 2;
    let mut y = Vec::with_capacity(2 * d);
    for m in [y0, y1] {
        for i in 0..n {
            for j in i..n {
                y.push(m[(i, j)]);
            }
        }
    }
    y
}

fn unpack(n: usize, y: &[f64]) -> (Mat, Mat) {
    let d = n * (n + 1) / 2;
    let mut mats = [Mat::zeros(n, n), Mat::zeros(n, n)];
    for (which, m) in mats.iter_mut().enumerate() {
        let mut a = which * d;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = y[a];
                m[(j, i)] = y[a];
                a += 1;
            }
        }
    }
    let [y0, y1] = mats;
    (y0, y1)
}

impl Block {
    fn evaluate(&self, y0: &Mat, y1: &Mat) -> Mat {
        let x = y0 + y1 * self.rho;
        let k = &self.k_mat;
        let mut s = &self.s0 + (k.transpose() * &x + &x * k) * self.sign;
        if self.c_nu != 0.0 {
            s += y1 * (self.sign * self.c_nu);
        }
        // Exact symmetry keeps Cholesky checks honest.
        let st = s.transpose();
        (s + st) * 0.5
    }
}

/// Barrier value Σ −log det S_c, or `None` when some block is not PD.
fn barrier_value(p: &HalfStep, y0: &Mat, y1: &Mat) -> Option<f64> {
    let mut phi = 0.0;
    for b in &p.blocks {
        let s = b.evaluate(y0, y1);
        let chol = s.cholesky()?;
        let l = chol.l();
        for i in 0..p.n {
            let d = l[(i, i)];
            if d <= 0.0 {
                return None;
            }
            phi -= 2.0 * d.ln();
        }
    }
    Some(phi)
}

fn objective(p: &HalfStep, y0: &Mat, y1: &Mat) -> f64 {
    (y0.transpose() * &p.w0).trace() + (y1.transpose() * &p.w1).trace()
}

/// Gradient vector of the linear objective in the packed basis.
fn objective_gradient(p: &HalfStep) -> Vec<f64> {
    let d = p.n * (p.n + 1) / 2;
    let mut w = vec![0.0; 2 * d];
    for (a, wa) in w.iter_mut().enumerate() {
        let (first, i, j) = basis_entry(p.n, a);
        let mat = if first { &p.w0 } else { &p.w1 };
        *wa = if i == j { mat[(i, i)] } else { 2.0 * mat[(i, j)] };
    }
    w
}

/// Barrier gradient and Hessian at `(y0, y1)`; `None` if a block is not PD.
fn barrier_derivatives(p: &HalfStep, y0: &Mat, y1: &Mat) -> Option<(Vec<f64>, Mat)> {
    let n = p.n;
    let m = n * (n + 1);
    let contributions: Option<Vec<(Vec<f64>, Mat)>> = p
        .blocks
        .par_iter()
        .map(|blk| {
            let s = blk.evaluate(y0, y1);
            let chol = s.cholesky()?;
            // R = L⁻¹, so S⁻¹ = Rᵀ R and tr(S⁻¹ M) = tr(R M Rᵀ).
            let r = chol
                .l()
                .solve_lower_triangular(&Mat::identity(n, n))?;
            let p_cols = &r * blk.k_mat.transpose();

            let mut grad = vec![0.0; m];
            let mut z = Mat::zeros(m, n * n);
            let mut atilde = Mat::zeros(n, n);
            for a in 0..m {
                let (first, i, j) = basis_entry(n, a);
                atilde.fill(0.0);
                let ri = r.column(i);
                let rj = r.column(j);
                let pi = p_cols.column(i);
                let pj = p_cols.column(j);
                // R (KᵀE + EK) Rᵀ  via outer products of columns.
                atilde.ger(blk.sign, &pi, &rj, 1.0);
                atilde.ger(blk.sign, &rj, &pi, 1.0);
                if i != j {
                    atilde.ger(blk.sign, &pj, &ri, 1.0);
                    atilde.ger(blk.sign, &ri, &pj, 1.0);
                }
                if !first {
                    let mut scaled = atilde * blk.rho;
                    let c = blk.sign * blk.c_nu;
                    if c != 0.0 {
                        scaled.ger(c, &ri, &rj, 1.0);
                        scaled.ger(c, &rj, &ri, 1.0);
                        if i == j {
                            // The two ger calls double-counted E_ii.
                            scaled.ger(-c, &ri, &ri, 1.0);
                        }
                    }
                    atilde = scaled;
                }
                grad[a] = -atilde.trace();
                for (idx, v) in atilde.iter().enumerate() {
                    z[(a, idx)] = *v;
                }
            }
            let hess = &z * z.transpose();
            Some((grad, hess))
        })
        .collect();
    let contributions = contributions?;

    let mut grad = vec![0.0; m];
    let mut hess = Mat::zeros(m, m);
    for (g, h) in contributions {
        for (ga, v) in grad.iter_mut().zip(g.iter()) {
            *ga += v;
        }
        hess += h;
    }
    Some((grad, hess))
}

/// Minimizes the linear objective over the strictly feasible region,
/// starting from `(y0, y1)` (which must satisfy every block strictly).
/// Returns the best iterate found; errs with a diagnostic when the start
/// is infeasible or Newton breaks down before any progress.
pub(crate) fn solve_half_step(p: &HalfStep, y0: &Mat, y1: &Mat) -> Result<(Mat, Mat), String> {
    let n = p.n;
    let m = n * (n + 1);
    let mut y = pack(n, y0, y1);

    let (cy0, cy1) = unpack(n, &y);
    if barrier_value(p, &cy0, &cy1).is_none() {
        return Err("initial iterate is not strictly feasible".into());
    }

    let w = objective_gradient(p);
    let f = |y: &[f64]| -> f64 {
        let (a, b) = unpack(n, y);
        objective(p, &a, &b)
    };

    let m_total = (p.blocks.len() * n) as f64;
    let f0 = f(&y);
    let mut t = m_total / (0.1 * (1.0 + f0.abs()));
    let mut best = y.clone();
    let mut best_f = f0;

    for _outer in 0..24 {
        // Newton centering for the current t.
        for _inner in 0..60 {
            let (cy0, cy1) = unpack(n, &y);
            let Some((bg, bh)) = barrier_derivatives(p, &cy0, &cy1) else {
                return Err("barrier evaluation left the feasible cone".into());
            };
            let mut g = Mat::zeros(m, 1);
            for a in 0..m {
                g[(a, 0)] = t * w[a] + bg[a];
            }
            // Ridge keeps the solve meaningful when the Hessian is
            // nearly singular far from the analytic center.
            let base_ridge = 1e-12 * (bh.trace() / m as f64).max(1e-300);
            let mut delta = None;
            let mut ridge = base_ridge;
            for _ in 0..24 {
                let mut hr = bh.clone();
                for a in 0..m {
                    hr[(a, a)] += ridge;
                }
                if let Some(chol) = hr.cholesky() {
                    delta = Some(chol.solve(&(-&g)));
                    break;
                }
                ridge *= 100.0;
            }
            let Some(delta) = delta else {
                return Err("Newton system not positive definite".into());
            };

            let decrement = -(g.transpose() * &delta)[(0, 0)];
            if !decrement.is_finite() {
                return Err("non-finite Newton decrement".into());
            }
            if decrement * 0.5 <= 1e-10 {
                break;
            }

            // Backtracking line search on t·f + φ.
            let phi0 = {
                let (a, b) = unpack(n, &y);
                barrier_value(p, &a, &b).unwrap()
            };
            let f_curr = f(&y);
            let total0 = t * f_curr + phi0;
            let slope = (g.transpose() * &delta)[(0, 0)];
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-12 {
                let trial: Vec<f64> =
                    y.iter().zip(delta.iter()).map(|(v, d)| v + step * d).collect();
                let (a, b) = unpack(n, &trial);
                if let Some(phi) = barrier_value(p, &a, &b) {
                    let total = t * f(&trial) + phi;
                    if total <= total0 + 0.01 * step * slope {
                        y = trial;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }

        let f_now = f(&y);
        if f_now < best_f {
            best_f = f_now;
            best = y.clone();
        }
        if m_total / t <= p.gap_tol * (1.0 + f_now.abs()) {
            break;
        }
        t *= 10.0;
    }

    let (y0_out, y1_out) = unpack(n, &best);
    Ok((y0_out, y1_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basis_enumeration_round_trips() {
        let n = 4;
        let d = n * (n + 1) / 2;
        let mut seen = std::collections::HashSet::new();
        for a in 0..2 * d {
            let (first, i, j) = basis_entry(n, a);
            assert!(i <= j && j < n);
            assert!(seen.insert((first, i, j)));
        }
        let y0 = Mat::from_fn(n, n, |i, j| (i + j) as f64);
        let y1 = Mat::from_fn(n, n, |i, j| (i * j) as f64 + 1.0);
        let y0s = (&y0 + y0.transpose()) * 0.5;
        let y1s = (&y1 + y1.transpose()) * 0.5;
        let packed = pack(n, &y0s, &y1s);
        let (r0, r1) = unpack(n, &packed);
        assert_eq!(r0, y0s);
        assert_eq!(r1, y1s);
    }

    /// min trace(X) s.t. X ⪰ I (scalar blocks) has optimum X = I.
    #[test]
    fn scalar_floor_problem() {
        let n = 2;
        let p = HalfStep {
            n,
            blocks: vec![Block {
                k_mat: Mat::identity(n, n) * 0.5,
                c_nu: 0.0,
                rho: 0.0,
                sign: 1.0,
                s0: Mat::identity(n, n) * -1.0,
            }],
            w0: Mat::identity(n, n),
            w1: Mat::zeros(n, n),
            gap_tol: 1e-10,
        };
        let start = Mat::identity(n, n) * 5.0;
        let (y0, _y1) = solve_half_step(&p, &start, &Mat::zeros(n, n)).unwrap();
        assert_relative_eq!(y0[(0, 0)], 1.0, epsilon = 1e-6);
        assert_relative_eq!(y0[(1, 1)], 1.0, epsilon = 1e-6);
        assert!(y0[(0, 1)].abs() < 1e-5);
    }

    /// Scalar Lyapunov inequality: minimize x s.t. 2a·x + q ≤ 0, x ≥ floor
    /// with a = −1, q = 1 → optimum x = 1/2.
    #[test]
    fn scalar_lyapunov_inequality() {
        let n = 1;
        let a = Mat::from_row_slice(1, 1, &[-1.0]);
        let p = HalfStep {
            n,
            blocks: vec![
                Block {
                    k_mat: a,
                    c_nu: 0.0,
                    rho: 0.0,
                    sign: -1.0,
                    s0: Mat::from_row_slice(1, 1, &[-1.0]), // −q, margin 0
                },
                Block {
                    k_mat: Mat::identity(1, 1) * 0.5,
                    c_nu: 0.0,
                    rho: 0.0,
                    sign: 1.0,
                    s0: Mat::from_row_slice(1, 1, &[-1e-6]),
                },
            ],
            w0: Mat::identity(1, 1),
            w1: Mat::zeros(1, 1),
            gap_tol: 1e-10,
        };
        let start = Mat::from_row_slice(1, 1, &[2.0]);
        let (y0, _) = solve_half_step(&p, &start, &Mat::zeros(1, 1)).unwrap();
        assert_relative_eq!(y0[(0, 0)], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let n = 1;
        let p = HalfStep {
            n,
            blocks: vec![Block {
                k_mat: Mat::identity(1, 1) * 0.5,
                c_nu: 0.0,
                rho: 0.0,
                sign: 1.0,
                s0: Mat::from_row_slice(1, 1, &[-1.0]),
            }],
            w0: Mat::identity(1, 1),
            w1: Mat::zeros(1, 1),
            gap_tol: 1e-8,
        };
        // Start below the floor: 0.5 < 1.
        let start = Mat::from_row_slice(1, 1, &[0.5]);
        assert!(solve_half_step(&p, &start, &Mat::zeros(1, 1)).is_err());
    }
}
