//! Per-cluster parameter-varying balanced truncation: triangular Cholesky
//! factors of the Gramians, a smoothly aligned SVD of their product across
//! the grid, the balancing transformation T̂(ρ), order selection, and
//! truncation or residualization, plus reassembly of the reduced model.
//!
//! The reduced state matrix depends on the rate through two sources: the
//! retained cluster coupling Ẽ1 and the derivative of the balancing
//! transform, `−T̂⁻¹(∂T̂/∂ρ)ρ̇`. Both enter the vertex matrices
//! `Â(ρ_k, ±δ)`.

use crate::assignment::min_cost_assignment;
use crate::clustering::{ClusterSubsystem, ClusteredSystem};
use crate::error::{LpvError, Result};
use crate::gramian::AffineGramian;
use crate::model::{GridPoint, ReducedLpvModel, ReducedMeta};
use crate::numerics::CubicSpline;
use crate::tracking::ModeKind;
use crate::{Mat, Vec64};
use rayon::prelude::*;
use serde::Serialize;

/// Per-point triangular factors and the aligned SVD of their product.
#[derive(Debug, Clone)]
pub struct BalancingFactors {
    /// Upper triangular, `X_o(ρ_k) = R_oᵀ R_o`.
    pub r_o: Vec<Mat>,
    /// Lower triangular, `X_c(ρ_k) = R_c R_cᵀ`.
    pub r_c: Vec<Mat>,
    /// Aligned left singular vectors of `R_o R_c`.
    pub u: Vec<Mat>,
    /// Aligned singular values (consistent trajectory order, descending
    /// only at the first grid point).
    pub s: Vec<Vec64>,
    /// Aligned right singular vectors.
    pub v: Vec<Mat>,
    pub warnings: Vec<String>,
}

/// How the kept order is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SelectionRule {
    /// Keep σ trajectories with `max_ρ σ_j > η · max_ρ σ_1`.
    Threshold(f64),
    /// Fixed kept order (clamped to the cluster dimension).
    Explicit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReductionMode {
    Truncate,
    Residualize,
}

/// Chosen order for one cluster.
#[derive(Debug, Clone, Serialize)]
pub struct OrderSelection {
    pub kept: usize,
    /// `max_ρ σ_j(ρ)` per aligned trajectory.
    pub profile: Vec<f64>,
    pub rule: SelectionRule,
    pub mode: ReductionMode,
}

/// One cluster after balancing and truncation/residualization.
#[derive(Debug, Clone)]
pub struct ReducedSubsystem {
    /// Â(ρ_k, 0).
    pub a0: Vec<Mat>,
    /// `[Â(ρ_k, −δ), Â(ρ_k, +δ)]`.
    pub vertex_a: Vec<[Mat; 2]>,
    pub b: Vec<Mat>,
    pub c: Vec<Mat>,
    pub kept: usize,
    /// Worst relative balancing-identity residual across the grid.
    pub balancing_residual: f64,
    pub warnings: Vec<String>,
}

/// Cholesky factors of both Gramians at every grid point, with the
/// positive-diagonal uniqueness convention.
pub fn factorize(
    x_o: &AffineGramian,
    x_c: &AffineGramian,
    rho_grid: &[f64],
) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let factors: Result<Vec<(Mat, Mat)>> = rho_grid
        .par_iter()
        .enumerate()
        .map(|(k, &rho)| {
            let chol_o = x_o
                .evaluate(rho)
                .cholesky()
                .ok_or(LpvError::NotPositiveDefinite { point: k })?;
            let chol_c = x_c
                .evaluate(rho)
                .cholesky()
                .ok_or(LpvError::NotPositiveDefinite { point: k })?;
            // nalgebra returns the lower factor L with X = LLᵀ; the upper
            // observability factor is its transpose.
            Ok((chol_o.l().transpose(), chol_c.l()))
        })
        .collect();
    let factors = factors?;
    Ok(factors.into_iter().unzip())
}

/// Per-point SVDs of the factor products, aligned across the grid:
/// columns matched by the maximal `|u_iᵀu_j|` assignment, signs
/// synchronized so consecutive U columns correlate nonnegatively, and
/// S/V permuted consistently.
pub fn smooth_svd(products: &[Mat]) -> Result<BalancingFactorsSvd> {
    let n = products[0].nrows();
    let mut warnings = Vec::new();

    // Plain SVDs first (descending σ at every point).
    let mut triples: Vec<(Mat, Vec64, Mat)> = Vec::with_capacity(products.len());
    for (k, p) in products.iter().enumerate() {
        let svd = p.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| LpvError::Internal("SVD without U".into()))?;
        let vt = svd.v_t.ok_or_else(|| LpvError::Internal("SVD without Vᵀ".into()))?;
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        let u = Mat::from_fn(n, n, |r, c| u[(r, order[c])]);
        let v = Mat::from_fn(n, n, |r, c| vt[(order[c], r)]);
        let s_sorted = Vec64::from_fn(n, |i, _| s[order[i]]);
        let smax = s_sorted[0].max(1e-300);
        for i in 0..n - 1 {
            if s_sorted[i] - s_sorted[i + 1] < 1e-12 * smax {
                warnings.push(format!(
                    "degenerate singular value gap at grid point {k} (sigma {i} vs {}); alignment choice is arbitrary but deterministic",
                    i + 1
                ));
                break;
            }
        }
        triples.push((u, s_sorted, v));
    }

    // Sequential alignment k → k+1.
    for k in 1..triples.len() {
        let (prev_u, rest) = triples.split_at_mut(k);
        let prev_u = &prev_u[k - 1].0;
        let (u, s, v) = &mut rest[0];
        let mut cost = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                cost[(i, j)] = 1.0 - prev_u.column(i).dot(&u.column(j)).abs();
            }
        }
        let assignment = min_cost_assignment(&cost)?;
        let cols = assignment.assignment;
        let mut u_new = Mat::zeros(n, n);
        let mut v_new = Mat::zeros(n, n);
        let mut s_new = Vec64::zeros(n);
        for i in 0..n {
            let j = cols[i];
            let flip = if prev_u.column(i).dot(&u.column(j)) < 0.0 { -1.0 } else { 1.0 };
            u_new.set_column(i, &(u.column(j) * flip));
            v_new.set_column(i, &(v.column(j) * flip));
            s_new[i] = s[j];
        }
        *u = u_new;
        *s = s_new;
        *v = v_new;
    }

    let mut u_all = Vec::with_capacity(triples.len());
    let mut s_all = Vec::with_capacity(triples.len());
    let mut v_all = Vec::with_capacity(triples.len());
    for (u, s, v) in triples {
        u_all.push(u);
        s_all.push(s);
        v_all.push(v);
    }
    Ok(BalancingFactorsSvd { u: u_all, s: s_all, v: v_all, warnings })
}

/// Aligned SVD triples without the triangular factors.
#[derive(Debug, Clone)]
pub struct BalancingFactorsSvd {
    pub u: Vec<Mat>,
    pub s: Vec<Vec64>,
    pub v: Vec<Mat>,
    pub warnings: Vec<String>,
}

/// Factorizes both Gramians and aligns the product SVDs.
pub fn balancing_factors(
    x_o: &AffineGramian,
    x_c: &AffineGramian,
    rho_grid: &[f64],
) -> Result<BalancingFactors> {
    let (r_o, r_c) = factorize(x_o, x_c, rho_grid)?;
    let products: Vec<Mat> = r_o.iter().zip(r_c.iter()).map(|(o, c)| o * c).collect();
    let svd = smooth_svd(&products)?;
    Ok(BalancingFactors {
        r_o,
        r_c,
        u: svd.u,
        s: svd.s,
        v: svd.v,
        warnings: svd.warnings,
    })
}

/// Applies the selection rule to the aligned singular value trajectories.
/// Clusters of dimension ≤ 2 are exempt from reduction: a single mode
/// cannot be reduced further without destroying its block.
pub fn select_order(factors: &BalancingFactors, rule: SelectionRule, mode: ReductionMode) -> OrderSelection {
    let n = factors.s[0].len();
    let mut profile = vec![0.0f64; n];
    for s in &factors.s {
        for j in 0..n {
            profile[j] = profile[j].max(s[j]);
        }
    }
    let kept = if n <= 2 {
        n
    } else {
        match rule {
            SelectionRule::Explicit(r) => r.min(n),
            SelectionRule::Threshold(eta) => {
                let top = profile.iter().copied().fold(0.0f64, f64::max);
                // Trajectories are aligned, not sorted; keep the count of
                // significant ones (they are then gathered by rank).
                profile.iter().filter(|&&p| p > eta * top).count()
            }
        }
    };
    OrderSelection { kept, profile, rule, mode }
}

/// Indices of the `kept` largest σ trajectories (by profile), in aligned
/// order, plus the complement.
fn kept_indices(profile: &[f64], kept: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..profile.len()).collect();
    order.sort_by(|&i, &j| profile[j].total_cmp(&profile[i]).then(i.cmp(&j)));
    let mut keep: Vec<usize> = order[..kept].to_vec();
    let mut drop: Vec<usize> = order[kept..].to_vec();
    keep.sort_unstable();
    drop.sort_unstable();
    (keep, drop)
}

fn gather_columns(m: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

/// Balances the subsystem with `T̂ = R_c V S^{−1/2}` and reduces it to the
/// kept order by truncation or residualization.
pub fn balance_and_truncate(
    sub: &ClusterSubsystem,
    factors: &BalancingFactors,
    selection: &OrderSelection,
) -> Result<ReducedSubsystem> {
    let n = sub.a[0].nrows();
    let npts = sub.rho_grid.len();
    let r = selection.kept;
    let mut warnings = Vec::new();
    let (keep, dropped) = kept_indices(&selection.profile, r);

    // The kept singular values must stay away from underflow; tiny kept σ
    // means the order is too large for the balancing to be well posed.
    for k in 0..npts {
        let smax = factors.s[k].iter().copied().fold(0.0f64, f64::max);
        let smin_kept = keep
            .iter()
            .map(|&j| factors.s[k][j])
            .fold(f64::INFINITY, f64::min);
        if smin_kept < 1e-12 * smax {
            return Err(LpvError::SingularValueUnderflow {
                point: k,
                ratio: smin_kept / smax.max(1e-300),
            });
        }
    }

    let mut mode = selection.mode;
    if mode == ReductionMode::Residualize && !dropped.is_empty() {
        // Residualization needs the full transform, including the columns
        // of the discarded states.
        let full_ok = (0..npts).all(|k| {
            let smax = factors.s[k].iter().copied().fold(0.0f64, f64::max);
            let smin = factors.s[k].iter().copied().fold(f64::INFINITY, f64::min);
            smin >= 1e-12 * smax
        });
        if !full_ok {
            warnings.push(
                "residualization fell back to truncation: discarded singular values underflow"
                    .into(),
            );
            mode = ReductionMode::Truncate;
        }
    }

    // Full balancing transforms at every point (order [kept | dropped]).
    let order: Vec<usize> = keep.iter().chain(dropped.iter()).copied().collect();
    let mut t_hat = Vec::with_capacity(npts);
    let mut t_inv = Vec::with_capacity(npts);
    let mut balancing_residual = 0.0f64;
    for k in 0..npts {
        let u = gather_columns(&factors.u[k], &order);
        let v = gather_columns(&factors.v[k], &order);
        let s: Vec<f64> = order.iter().map(|&j| factors.s[k][j]).collect();
        // In truncate mode the dropped columns may underflow; their
        // transform columns are never used, so substitute 1 to keep the
        // arithmetic finite.
        let s_safe: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(i, &x)| if mode == ReductionMode::Truncate && i >= r { 1.0 } else { x })
            .collect();
        let s_isqrt = Mat::from_fn(n, n, |i, j| {
            if i == j { 1.0 / s_safe[i].sqrt() } else { 0.0 }
        });
        let th = &factors.r_c[k] * &v * &s_isqrt;
        let ti = &s_isqrt * u.transpose() * &factors.r_o[k];

        // Balancing identity on the kept block: T̂ᵀ X_o T̂ = S = T̂⁻¹ X_c T̂⁻ᵀ.
        let xo = factors.r_o[k].transpose() * &factors.r_o[k];
        let xc = &factors.r_c[k] * factors.r_c[k].transpose();
        let smax = s[0].max(1e-300);
        let go = th.transpose() * &xo * &th;
        let gc = &ti * &xc * ti.transpose();
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { s[i] } else { 0.0 };
                balancing_residual = balancing_residual
                    .max((go[(i, j)] - target).abs() / smax)
                    .max((gc[(i, j)] - target).abs() / smax);
            }
        }
        t_hat.push(th);
        t_inv.push(ti);
    }

    // ∂T̂/∂ρ from the spline through the (reordered) transforms.
    let spline = CubicSpline::fit(&sub.rho_grid, &t_hat)?;

    let mut a0 = Vec::with_capacity(npts);
    let mut vertex_a = Vec::with_capacity(npts);
    let mut b_out = Vec::with_capacity(npts);
    let mut c_out = Vec::with_capacity(npts);
    for k in 0..npts {
        let th = &t_hat[k];
        let ti = &t_inv[k];
        let a_bal = ti * &sub.a[k] * th;
        let e1_bal = ti * &sub.e1_base[k] * th;
        let tdot_term = ti * spline.derivative(sub.rho_grid[k]);
        // Combined rate base: retained coupling plus the transform's own
        // parameter variation.
        let rate_base = &e1_bal - &tdot_term;
        let b_bal = ti * &sub.b[k];
        let c_bal = &sub.c[k] * th;
        let delta = sub.rate_bound;

        match mode {
            ReductionMode::Truncate => {
                let slice = |m: &Mat| m.view((0, 0), (r, r)).into_owned();
                let a0_k = slice(&a_bal);
                let rb = slice(&rate_base);
                a0.push(a0_k.clone());
                vertex_a.push([&a0_k - &rb * delta, &a0_k + &rb * delta]);
                b_out.push(b_bal.rows(0, r).into_owned());
                c_out.push(c_bal.columns(0, r).into_owned());
            }
            ReductionMode::Residualize => {
                let m = n - r;
                let reduce_at = |nu: f64| -> Option<(Mat, Mat, Mat, Mat)> {
                    let f = &a_bal + &rate_base * nu;
                    let f11 = f.view((0, 0), (r, r)).into_owned();
                    if m == 0 {
                        return Some((
                            f11,
                            b_bal.rows(0, r).into_owned(),
                            c_bal.columns(0, r).into_owned(),
                            Mat::zeros(c_bal.nrows(), b_bal.ncols()),
                        ));
                    }
                    let f12 = f.view((0, r), (r, m)).into_owned();
                    let f21 = f.view((r, 0), (m, r)).into_owned();
                    let f22 = f.view((r, r), (m, m)).into_owned();
                    let f22_inv = f22.try_inverse()?;
                    let b1 = b_bal.rows(0, r).into_owned();
                    let b2 = b_bal.rows(r, m).into_owned();
                    let c1 = c_bal.columns(0, r).into_owned();
                    let c2 = c_bal.columns(r, m).into_owned();
                    let a_red = &f11 - &f12 * &f22_inv * &f21;
                    let b_red = &b1 - &f12 * &f22_inv * &b2;
                    let c_red = &c1 - &c2 * &f22_inv * &f21;
                    let d_corr = -(&c2 * &f22_inv * &b2);
                    Some((a_red, b_red, c_red, d_corr))
                };
                match (reduce_at(0.0), reduce_at(-delta), reduce_at(delta)) {
                    (Some((a_mid, b_red, c_red, _d)), Some((a_lo, ..)), Some((a_hi, ..))) => {
                        a0.push(a_mid);
                        vertex_a.push([a_lo, a_hi]);
                        b_out.push(b_red);
                        c_out.push(c_red);
                    }
                    _ => {
                        warnings.push(format!(
                            "residualization block singular at grid point {k}; fell back to truncation"
                        ));
                        let slice = |mm: &Mat| mm.view((0, 0), (r, r)).into_owned();
                        let a0_k = slice(&a_bal);
                        let rb = slice(&rate_base);
                        a0.push(a0_k.clone());
                        vertex_a.push([&a0_k - &rb * delta, &a0_k + &rb * delta]);
                        b_out.push(b_bal.rows(0, r).into_owned());
                        c_out.push(c_bal.columns(0, r).into_owned());
                    }
                }
            }
        }
    }

    Ok(ReducedSubsystem {
        a0,
        vertex_a,
        b: b_out,
        c: c_out,
        kept: r,
        balancing_residual,
        warnings,
    })
}

/// Joins the reduced cluster subsystems with the preserved (unstable and
/// integrator) states into the final reduced grid model. `reduced[l] =
/// None` passes cluster `l` through unreduced.
pub fn reassemble(
    clustered: &ClusteredSystem,
    reduced: &[Option<ReducedSubsystem>],
) -> Result<ReducedLpvModel> {
    let npts = clustered.rho_grid.len();
    let delta = clustered.rate_bound;
    if reduced.len() != clustered.n_clusters() {
        return Err(LpvError::Internal(format!(
            "{} reduction results for {} clusters",
            reduced.len(),
            clustered.n_clusters()
        )));
    }

    // Passthrough view of a cluster or preserved range.
    let passthrough = |range: (usize, usize), k: usize| -> (Mat, [Mat; 2], Mat, Mat) {
        let (s, e) = range;
        let w = e - s;
        let a = clustered.a[k].view((s, s), (w, w)).into_owned();
        let e1 = clustered.e1_base[k].view((s, s), (w, w)).into_owned();
        let b = clustered.b[k].rows(s, w).into_owned();
        let c = clustered.c[k].columns(s, w).into_owned();
        let lo = &a - &e1 * delta;
        let hi = &a + &e1 * delta;
        (a, [lo, hi], b, c)
    };

    let mut widths = Vec::new();
    for (l, red) in reduced.iter().enumerate() {
        let (s, e) = clustered.partition.ranges[l];
        widths.push(red.as_ref().map_or(e - s, |r| r.kept));
    }
    let pres_w = clustered.partition.preserved_range.1 - clustered.partition.preserved_range.0;
    let n_red: usize = widths.iter().sum::<usize>() + pres_w;
    if n_red == 0 {
        return Err(LpvError::InvalidModel(
            "reduction removed every state; lower eta or keep more orders".into(),
        ));
    }

    let mut points = Vec::with_capacity(npts);
    let mut vertex_a = Vec::with_capacity(npts);
    for k in 0..npts {
        let mut a = Mat::zeros(n_red, n_red);
        let mut lo = Mat::zeros(n_red, n_red);
        let mut hi = Mat::zeros(n_red, n_red);
        let mut b = Mat::zeros(n_red, clustered.n_u);
        let mut c = Mat::zeros(clustered.n_y, n_red);
        let mut off = 0usize;
        let place =
            |off: usize, blk_a: &Mat, blk_lo: &Mat, blk_hi: &Mat, blk_b: &Mat, blk_c: &Mat,
             a: &mut Mat, lo: &mut Mat, hi: &mut Mat, b: &mut Mat, c: &mut Mat| {
                let w = blk_a.nrows();
                a.view_mut((off, off), (w, w)).copy_from(blk_a);
                lo.view_mut((off, off), (w, w)).copy_from(blk_lo);
                hi.view_mut((off, off), (w, w)).copy_from(blk_hi);
                b.view_mut((off, 0), (w, blk_b.ncols())).copy_from(blk_b);
                c.view_mut((0, off), (blk_c.nrows(), w)).copy_from(blk_c);
            };
        for (l, red) in reduced.iter().enumerate() {
            match red {
                Some(rs) => {
                    place(
                        off,
                        &rs.a0[k],
                        &rs.vertex_a[k][0],
                        &rs.vertex_a[k][1],
                        &rs.b[k],
                        &rs.c[k],
                        &mut a,
                        &mut lo,
                        &mut hi,
                        &mut b,
                        &mut c,
                    );
                    off += rs.kept;
                }
                None => {
                    let (pa, [plo, phi], pb, pc) =
                        passthrough(clustered.partition.ranges[l], k);
                    place(off, &pa, &plo, &phi, &pb, &pc, &mut a, &mut lo, &mut hi, &mut b, &mut c);
                    off += pa.nrows();
                }
            }
        }
        if pres_w > 0 {
            let (pa, [plo, phi], pb, pc) = passthrough(clustered.partition.preserved_range, k);
            place(off, &pa, &plo, &phi, &pb, &pc, &mut a, &mut lo, &mut hi, &mut b, &mut c);
            off += pres_w;
        }
        if off != n_red {
            return Err(LpvError::Internal(format!(
                "reassembly wrote {off} states, expected {n_red}"
            )));
        }
        points.push(GridPoint {
            rho: clustered.rho_grid[k],
            a,
            b,
            c,
            d: clustered.d[k].clone(),
        });
        vertex_a.push([lo, hi]);
    }

    let mut unstable_states = 0usize;
    let mut integrators = 0usize;
    for blk in &clustered.blocks {
        if blk.start >= clustered.partition.preserved_range.0
            && blk.start < clustered.partition.preserved_range.1
        {
            match blk.kind {
                ModeKind::Unstable => unstable_states += blk.size,
                ModeKind::Integrator => integrators += blk.size,
                ModeKind::Stable => {}
            }
        }
    }

    let model = ReducedLpvModel {
        n_x: n_red,
        n_u: clustered.n_u,
        n_y: clustered.n_y,
        rho_grid: clustered.rho_grid.clone(),
        rate_bound: clustered.rate_bound,
        points,
        vertex_a,
        meta: ReducedMeta { unstable_states, integrators },
    };
    model.validate()?;
    Ok(model)
}
