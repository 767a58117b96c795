//! Eigenvector smoothing via the unconstrained complex Procrustes problem,
//! plus the complex↔real repair for nearly-repeated real poles.
//!
//! Eigenvectors returned by pointwise decompositions carry arbitrary
//! per-point phases (and, inside repeated-eigenvalue groups, arbitrary
//! basis rotations). Smoothing re-aligns each group's basis across the grid
//! by solving `min_Q ‖V_k − V_{k+1} Q‖_F` successively in both directions
//! from the best-conditioned grid point, so that the eventual modal
//! transformation varies slowly in ρ.

use crate::error::{LpvError, Result};
use crate::model::GridLpvModel;
use crate::numerics::{complex_lstsq, cond2_complex};
use crate::tracking::{to_disk, EigenGrid, TrackedModes};
use crate::{C64, CMat, Mat};

/// Knobs for smoothing and repair.
#[derive(Debug, Clone)]
pub struct SmoothingConfig {
    /// Maximum tolerated relative change `‖ΔA_k‖/‖A_k‖` per repaired grid
    /// point; larger perturbations mean the model genuinely violates the
    /// constant-character assumption and the repair is refused.
    pub repair_budget: f64,
    /// Condition bound on each Procrustes solution; beyond this the
    /// underlying eigenspace jumped between grid points.
    pub cond_max: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { repair_budget: 1e-3, cond_max: 1e8 }
    }
}

/// A value spread below this (relative to the pole magnitude) marks a
/// repeated pole as numerically constant, in which case repair snaps the
/// whole group to its grand mean.
const NEAR_CONSTANT_SPREAD_TOL: f64 = 1e-6;

/// One applied repair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RepairEvent {
    /// Index into the group list handed to [`repair_complex_real`].
    pub group: usize,
    pub point: usize,
    /// Measured `‖ΔA_k‖₂ / ‖A_k‖₂`.
    pub rel_change: f64,
}

/// Diagnostics of a smoothing run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SmoothingReport {
    pub start_index: usize,
    /// `residuals[g][k]` = `‖V̄_k − V̄_{k+1}‖_F` for group `g` at the
    /// transition `k → k+1`.
    pub residuals: Vec<Vec<f64>>,
    /// Entrywise finite-difference derivative magnitudes of the stacked
    /// eigenvector matrix, before and after smoothing.
    pub deriv_max_before: f64,
    pub deriv_mean_before: f64,
    pub deriv_max_after: f64,
    pub deriv_mean_after: f64,
    /// Largest eigen-residual `‖A V̄ − V̄ Λ‖ / ‖A‖` over groups and points
    /// (informational; grows with the eigenvalue spread inside
    /// approximate-multiplicity groups).
    pub eigen_residual_max: f64,
    /// Column norms that drifted outside `[0.1, 10]` (norms are not
    /// re-normalized, which would break the Procrustes chain).
    pub norm_warnings: Vec<String>,
}

/// Solves the unconstrained complex Procrustes problem
/// `min_Q ‖V_prev − V_next Q‖_F`.
pub fn procrustes_step(v_prev: &CMat, v_next: &CMat) -> Result<CMat> {
    let sol = complex_lstsq(v_next, v_prev)?;
    if sol.rank_deficient {
        return Err(LpvError::EigenspaceDiscontinuity {
            from: 0,
            to: 0,
            cond: f64::INFINITY,
        });
    }
    let cond = cond2_complex(&sol.x);
    if !cond.is_finite() || cond > 1e8 {
        return Err(LpvError::EigenspaceDiscontinuity { from: 0, to: 0, cond });
    }
    Ok(sol.x)
}

/// Picks the grid point whose eigenvector matrix is best conditioned; ties
/// go to the smallest index.
pub fn choose_start(grid: &EigenGrid) -> usize {
    let mut best = 0usize;
    let mut best_cond = f64::INFINITY;
    for (k, d) in grid.decomps.iter().enumerate() {
        if d.cond_v < best_cond {
            best_cond = d.cond_v;
            best = k;
        }
    }
    best
}

fn stack_vectors(tracked: &TrackedModes, k: usize) -> CMat {
    let cols: Vec<_> = tracked
        .trajectories
        .iter()
        .map(|t| t.vectors.column(k).into_owned())
        .collect();
    CMat::from_columns(&cols)
}

fn derivative_stats(tracked: &TrackedModes, stacks: &[CMat]) -> (f64, f64) {
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for k in 0..stacks.len() - 1 {
        let h = tracked.rho_grid[k + 1] - tracked.rho_grid[k];
        for (a, b) in stacks[k].iter().zip(stacks[k + 1].iter()) {
            let d = (b - a).norm() / h;
            max = max.max(d);
            sum += d;
            count += 1;
        }
    }
    (max, if count > 0 { sum / count as f64 } else { 0.0 })
}

fn group_matrix(tracked: &TrackedModes, group: &[usize], k: usize) -> CMat {
    let cols: Vec<_> = group
        .iter()
        .map(|&t| tracked.trajectories[t].vectors.column(k).into_owned())
        .collect();
    CMat::from_columns(&cols)
}

/// Aligns every group's eigenvector basis across the grid, starting at
/// `k_star` and proceeding in both directions. Vectors are updated in
/// place; conjugate partners mirror their representative.
pub fn smooth_sequence(
    tracked: &mut TrackedModes,
    groups: &[Vec<usize>],
    k_star: usize,
    model: &GridLpvModel,
    _cfg: &SmoothingConfig,
) -> Result<SmoothingReport> {
    let n_pts = tracked.n_points();
    if k_star >= n_pts {
        return Err(LpvError::InvalidConfig(format!(
            "smoothing start index {k_star} out of range (grid has {n_pts} points)"
        )));
    }

    let before: Vec<CMat> = (0..n_pts).map(|k| stack_vectors(tracked, k)).collect();
    let (deriv_max_before, deriv_mean_before) = derivative_stats(tracked, &before);

    let mut report = SmoothingReport {
        start_index: k_star,
        residuals: vec![vec![0.0; n_pts.saturating_sub(1)]; groups.len()],
        deriv_max_before,
        deriv_mean_before,
        ..Default::default()
    };

    for (g, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let raw: Vec<CMat> = (0..n_pts).map(|k| group_matrix(tracked, group, k)).collect();
        let mut out: Vec<Option<CMat>> = vec![None; n_pts];
        out[k_star] = Some(raw[k_star].clone());

        // Forward from the anchor, then backward; each step aligns the raw
        // basis to the already-smoothed neighbour, so the per-point
        // transform accumulates stepwise solutions.
        for k in k_star..n_pts - 1 {
            let prev = out[k].as_ref().unwrap();
            let q = procrustes_step(prev, &raw[k + 1]).map_err(|e| tag_transition(e, k, k + 1))?;
            let smoothed = &raw[k + 1] * &q;
            report.residuals[g][k] = (prev - &smoothed).norm();
            out[k + 1] = Some(smoothed);
        }
        for k in (0..k_star).rev() {
            let next = out[k + 1].as_ref().unwrap();
            let q = procrustes_step(next, &raw[k]).map_err(|e| tag_transition(e, k + 1, k))?;
            let smoothed = &raw[k] * &q;
            report.residuals[g][k] = (next - &smoothed).norm();
            out[k] = Some(smoothed);
        }

        // Write back, mirror conjugate partners, collect diagnostics.
        for k in 0..n_pts {
            let v = out[k].as_ref().unwrap();
            let a_norm = model.points[k].a.norm();
            let av = crate::numerics::complexify(&model.points[k].a) * v;
            for (c, &t) in group.iter().enumerate() {
                let col = v.column(c);
                tracked.trajectories[t].vectors.set_column(k, &col);
                let lam = tracked.trajectories[t].values[k];
                let resid = (av.column(c) - col * lam).norm();
                if a_norm > 0.0 {
                    report.eigen_residual_max = report.eigen_residual_max.max(resid / a_norm);
                }
                // Mirror the conjugate partner only where the pair is
                // actually complex; at locally-real points of a linked
                // transition pair the partner carries its own distinct
                // real eigenvector.
                if let Some(p) = tracked.partner[t] {
                    if lam.im != 0.0 {
                        let conj_col = col.map(|x| x.conj());
                        tracked.trajectories[p].vectors.set_column(k, &conj_col);
                    }
                }
            }
        }
        for (c, &t) in group.iter().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for k in 0..n_pts {
                let nrm = out[k].as_ref().unwrap().column(c).norm();
                lo = lo.min(nrm);
                hi = hi.max(nrm);
            }
            if lo < 0.1 || hi > 10.0 {
                report.norm_warnings.push(format!(
                    "mode {t}: smoothed eigenvector norms span [{lo:.3e}, {hi:.3e}]"
                ));
            }
        }
    }

    let after: Vec<CMat> = (0..n_pts).map(|k| stack_vectors(tracked, k)).collect();
    let (deriv_max_after, deriv_mean_after) = derivative_stats(tracked, &after);
    report.deriv_max_after = deriv_max_after;
    report.deriv_mean_after = deriv_mean_after;
    Ok(report)
}

fn tag_transition(e: LpvError, from: usize, to: usize) -> LpvError {
    match e {
        LpvError::EigenspaceDiscontinuity { cond, .. } => {
            LpvError::EigenspaceDiscontinuity { from, to, cond }
        }
        other => other,
    }
}

/// Repairs multiplicity groups whose eigenvalues pick up spurious imaginary
/// parts at isolated grid points (a nearly-repeated real pole resolved as a
/// tight complex pair by finite-precision eigensolvers).
///
/// At each offending point the complex pair is replaced by its real part
/// and the pair of conjugate eigenvectors by an orthonormal real basis of
/// their span; if the whole group is numerically constant its values snap
/// to the grand mean. The state matrix is updated consistently
/// (`Â V̂ = V̂ Λ̂` exactly) and the relative perturbation is charged against
/// `repair_budget`.
pub fn repair_complex_real(
    tracked: &mut TrackedModes,
    groups: &[Vec<usize>],
    model: &mut GridLpvModel,
    cfg: &SmoothingConfig,
) -> Result<Vec<RepairEvent>> {
    let n_pts = tracked.n_points();
    let mut events = Vec::new();

    for (g, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let offending: Vec<usize> = (0..n_pts)
            .filter(|&k| group.iter().any(|&t| tracked.trajectories[t].values[k].im != 0.0))
            .collect();
        if offending.is_empty() {
            continue;
        }
        if offending.len() == n_pts {
            // Complex at every point: a genuine complex group, not a
            // jittering real one. Leave it alone.
            continue;
        }

        // Target values: real parts at offending points; if the group is a
        // numerically constant pole, one shared value everywhere.
        let d = group.len();
        let mut target: Vec<Vec<f64>> = vec![vec![0.0; d]; n_pts];
        for k in 0..n_pts {
            for (c, &t) in group.iter().enumerate() {
                target[k][c] = tracked.trajectories[t].values[k].re;
            }
        }
        if d >= 2 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for row in &target {
                for &v in row {
                    lo = lo.min(v);
                    hi = hi.max(v);
                    sum += v;
                }
            }
            let mean = sum / (n_pts * d) as f64;
            if hi - lo <= NEAR_CONSTANT_SPREAD_TOL * mean.abs().max(1.0) {
                for row in &mut target {
                    row.iter_mut().for_each(|v| *v = mean);
                }
            }
        }

        for k in 0..n_pts {
            let values_changed = group
                .iter()
                .enumerate()
                .any(|(c, &t)| tracked.trajectories[t].values[k] != C64::new(target[k][c], 0.0));
            if !values_changed {
                continue;
            }

            // Real replacement basis: conjugate pairs inside the group turn
            // into (Re v, orthogonalized Im v); real members keep their
            // vectors.
            let n = model.n_x;
            let mut cols: Vec<Option<crate::Vec64>> = vec![None; d];
            for (c, &t) in group.iter().enumerate() {
                if cols[c].is_some() {
                    continue;
                }
                let lam = tracked.trajectories[t].values[k];
                let v = tracked.trajectories[t].vectors.column(k);
                if lam.im == 0.0 {
                    cols[c] = Some(v.map(|x| x.re));
                    continue;
                }
                let partner_c = group.iter().enumerate().position(|(c2, &t2)| {
                    c2 != c
                        && cols[c2].is_none()
                        && tracked.trajectories[t2].values[k] == lam.conj()
                });
                let Some(pc) = partner_c else {
                    return Err(LpvError::InvalidModel(format!(
                        "repair group {g}: eigenvalue {lam} at grid point {k} has no \
                         conjugate partner inside the group (assumption violation)"
                    )));
                };
                let x = v.map(|z| z.re);
                let y = v.map(|z| z.im);
                let nx = x.norm();
                if nx <= 1e-12 {
                    return Err(LpvError::InvalidModel(format!(
                        "repair group {g}: degenerate eigenvector at grid point {k}"
                    )));
                }
                let u1 = &x / nx;
                let mut y2 = y.clone();
                y2 -= &u1 * u1.dot(&y);
                let ny = y2.norm();
                if ny <= 1e-12 * y.norm().max(1.0) {
                    return Err(LpvError::InvalidModel(format!(
                        "repair group {g}: conjugate pair at grid point {k} spans no \
                         two-dimensional real subspace"
                    )));
                }
                cols[c] = Some(u1);
                cols[pc] = Some(y2 / ny);
            }
            let v_hat = Mat::from_columns(&cols.into_iter().map(Option::unwrap).collect::<Vec<_>>());
            debug_assert_eq!(v_hat.nrows(), n);

            // Δ = (V̂ Λ̂ − A V̂) V̂⁺ makes the repaired columns exact
            // eigenvectors of A + Δ with the target eigenvalues.
            let a = &model.points[k].a;
            let mut vl = v_hat.clone();
            for (c, col_target) in target[k].iter().enumerate() {
                let scaled = v_hat.column(c) * *col_target;
                vl.set_column(c, &scaled);
            }
            let resid = &vl - a * &v_hat;
            let pinv = v_hat
                .clone()
                .svd(true, true)
                .pseudo_inverse(1e-12)
                .map_err(|m| LpvError::Internal(format!("repair pseudo-inverse failed: {m}")))?;
            let delta = &resid * &pinv;

            let a_norm = crate::numerics::spectral_norm(a).max(f64::MIN_POSITIVE);
            let rel = crate::numerics::spectral_norm(&delta) / a_norm;
            if rel > cfg.repair_budget {
                return Err(LpvError::RepairBudget {
                    group: g,
                    delta: rel,
                    budget: cfg.repair_budget,
                });
            }

            model.points[k].a += &delta;
            for (c, &t) in group.iter().enumerate() {
                let lam = C64::new(target[k][c], 0.0);
                tracked.trajectories[t].values[k] = lam;
                let real_col = v_hat.column(c).map(|x| C64::new(x, 0.0));
                tracked.trajectories[t].vectors.set_column(k, &real_col);
                let (z, refl) = to_disk(lam, tracked.ts)?;
                tracked.trajectories[t].disk[k] = z;
                tracked.trajectories[t].reflected[k] = refl;
            }
            events.push(RepairEvent { group: g, point: k, rel_change: rel });
        }
    }
    Ok(events)
}
