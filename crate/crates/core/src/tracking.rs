//! Eigenvalue trajectory tracking across the scheduling grid.
//!
//! Each grid point of an LPV model is diagonalized, eigenvalues are mapped
//! into the open unit disk (with unstable ones reflected inside), and modes
//! at neighbouring grid points are paired by minimum-cost assignment under
//! the pseudo-hyperbolic metric, optionally weighted by eigenvector
//! alignment. The result is a set of continuous mode trajectories, the raw
//! material for smoothing, modal transformation and clustering.

use crate::assignment::{min_cost_assignment_lex, min_cost_assignment_tiebreak};
use crate::error::{LpvError, Result};
use crate::model::GridLpvModel;
use crate::numerics::{eig_decompose, EigDecomp, COND_MAX_DEFAULT};
use crate::{C64, CMat, Mat};
use rayon::prelude::*;

/// Discretization step used to map eigenvalues onto the unit disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingTime {
    /// `min(0.01, 0.5 / max|λ|)` over every eigenvalue on the grid, so the
    /// map is contractive and alias-free without manual tuning.
    Auto,
    /// Fixed step, validated against the aliasing limit `|Im λ|·T < π`.
    Fixed(f64),
}

/// Knobs for decomposition and matching.
#[derive(Debug, Clone)]
pub struct TrackingConfig {
    pub sampling: SamplingTime,
    /// Eigenvector condition bound above which a point is rejected as
    /// numerically defective.
    pub cond_max: f64,
    /// Reduced-cost tolerance for the assignment tie-break.
    pub tie_tol: f64,
    /// `|λ| ≤ integrator_tol` marks an integrator; such modes are excluded
    /// from the metric and matched by index.
    pub integrator_tol: f64,
    /// A transition row whose two smallest costs differ by less than this
    /// is flagged as ambiguous.
    pub ambiguity_tol: f64,
    /// Weight the disk metric by eigenvector misalignment `1 − MAC`.
    pub mac_weighting: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingTime::Auto,
            cond_max: COND_MAX_DEFAULT,
            tie_tol: 1e-12,
            integrator_tol: 1e-8,
            ambiguity_tol: 1e-9,
            mac_weighting: true,
        }
    }
}

/// Eigendecomposition of every grid point plus the chosen sampling time.
#[derive(Debug, Clone)]
pub struct EigenGrid {
    pub decomps: Vec<EigDecomp>,
    pub ts: f64,
    /// Largest eigenvalue magnitude seen anywhere on the grid.
    pub max_abs: f64,
}

/// Stability character of a tracked mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Stable,
    /// Reflected into the disk at one or more grid points.
    Unstable,
    /// `|λ| ≤ integrator_tol` (matched by index, excluded from metrics).
    Integrator,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Stable => "stable",
            ModeKind::Unstable => "unstable",
            ModeKind::Integrator => "integrator",
        }
    }
}

/// One mode followed across the whole grid.
#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    /// Continuous-time eigenvalue at each grid point.
    pub values: Vec<C64>,
    /// Eigenvectors; column `k` belongs to grid point `k`.
    pub vectors: CMat,
    /// Disk images `exp(λ T_s)`, reflected inside the disk if unstable.
    pub disk: Vec<C64>,
    /// Whether the disk image at point `k` was reflected.
    pub reflected: Vec<bool>,
    pub kind: ModeKind,
}

impl ModeTrajectory {
    pub fn is_integrator(&self) -> bool {
        self.kind == ModeKind::Integrator
    }

    pub fn is_unstable(&self) -> bool {
        self.kind == ModeKind::Unstable
    }

    /// True when the eigenvalue is complex on part of the grid and real on
    /// the rest (a genuine complex↔real transition or a numerically
    /// jittering repeated real pole).
    pub fn is_mixed_character(&self) -> bool {
        let any_complex = self.values.iter().any(|v| v.im != 0.0);
        let any_real = self.values.iter().any(|v| v.im == 0.0);
        any_complex && any_real
    }
}

/// Full set of tracked trajectories over a grid.
#[derive(Debug, Clone)]
pub struct TrackedModes {
    pub trajectories: Vec<ModeTrajectory>,
    /// `partner[i] = Some(j)` for complex-conjugate mode pairs.
    pub partner: Vec<Option<usize>>,
    pub ts: f64,
    pub rho_grid: Vec<f64>,
    /// `ambiguous[k][i]`: the pairing of trajectory `i` across the
    /// transition `k → k+1` had two near-equal candidates.
    pub ambiguous: Vec<Vec<bool>>,
}

impl TrackedModes {
    pub fn n_modes(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_points(&self) -> usize {
        self.rho_grid.len()
    }

    /// True for real modes and for the positive-imaginary member of each
    /// conjugate pair (the representative carried through clustering).
    pub fn is_canonical(&self, i: usize) -> bool {
        match self.partner[i] {
            None => true,
            Some(j) => i < j,
        }
    }

    pub fn canonical_indices(&self) -> Vec<usize> {
        (0..self.n_modes()).filter(|&i| self.is_canonical(i)).collect()
    }
}

/// Decomposes every grid point in parallel and fixes the sampling time.
pub fn decompose_grid(model: &GridLpvModel, cfg: &TrackingConfig) -> Result<EigenGrid> {
    let decomps: Result<Vec<EigDecomp>> = model
        .points
        .par_iter()
        .enumerate()
        .map(|(k, p)| eig_decompose(&p.a, cfg.cond_max).map_err(|e| tag_point(e, k)))
        .collect();
    let decomps = decomps?;

    let mut max_abs = 0.0f64;
    let mut max_im = 0.0f64;
    for d in &decomps {
        for v in &d.values {
            max_abs = max_abs.max(v.norm());
            max_im = max_im.max(v.im.abs());
        }
    }

    let ts = match cfg.sampling {
        SamplingTime::Auto => {
            if max_abs > 0.0 {
                (0.5 / max_abs).min(0.01)
            } else {
                0.01
            }
        }
        SamplingTime::Fixed(t) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(LpvError::InvalidConfig(format!(
                    "sampling time must be positive and finite, got {t}"
                )));
            }
            t
        }
    };
    let product = max_im * ts;
    if product >= std::f64::consts::PI {
        return Err(LpvError::Aliasing { product, ts });
    }

    Ok(EigenGrid { decomps, ts, max_abs })
}

/// Index of the candidate holding the exact conjugate of `vals[j]`.
fn conj_candidate(vals: &[C64], integrator: &[bool], j: usize) -> Result<usize> {
    let want = vals[j].conj();
    (0..vals.len())
        .find(|&c| c != j && !integrator[c] && vals[c] == want)
        .ok_or_else(|| {
            LpvError::Internal(format!("unpaired complex eigenvalue {} while matching", vals[j]))
        })
}

fn tag_point(e: LpvError, k: usize) -> LpvError {
    match e {
        LpvError::NearDefective { point: None, cond, max, near } => {
            LpvError::NearDefective { point: Some(k), cond, max, near }
        }
        other => other,
    }
}

/// Maps a continuous-time eigenvalue into the open unit disk. Returns the
/// disk value and whether it had to be reflected (`|exp(λT)| > 1`).
pub fn to_disk(lambda: C64, ts: f64) -> Result<(C64, bool)> {
    let z = (lambda * C64::new(ts, 0.0)).exp();
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(LpvError::OutsideDisk { magnitude: f64::INFINITY });
    }
    let m = z.norm();
    if (m - 1.0).abs() <= 1e-12 {
        return Err(LpvError::ImaginaryAxis { magnitude: m });
    }
    if m > 1.0 {
        // 1/conj(z): same argument, magnitude 1/|z|.
        Ok((z / C64::new(m * m, 0.0), true))
    } else {
        Ok((z, false))
    }
}

/// Pseudo-hyperbolic distance `|z₁ − z₂| / |1 − conj(z₁) z₂|` on the open
/// unit disk.
pub fn hyperbolic_distance(z1: C64, z2: C64) -> f64 {
    let num = (z1 - z2).norm();
    let den = (C64::new(1.0, 0.0) - z1.conj() * z2).norm();
    num / den
}

/// Modal assurance criterion `|v₁ᴴ v₂| / (‖v₁‖‖v₂‖)` between eigenvectors.
pub fn mode_alignment(v1: &CMat, c1: usize, v2: &CMat, c2: usize) -> f64 {
    let a = v1.column(c1);
    let b = v2.column(c2);
    let inner: C64 = a.dotc(&b);
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (inner.norm() / (na * nb)).min(1.0)
}

/// Disk distance weighted by eigenvector misalignment.
pub fn weighted_distance(z1: C64, z2: C64, align: f64) -> f64 {
    hyperbolic_distance(z1, z2) * (1.0 - align)
}

/// Per-point disk images plus the integrator mask.
struct DiskPoint {
    disk: Vec<C64>,
    reflected: Vec<bool>,
    integrator: Vec<bool>,
    n_int: usize,
    n_real: usize,
    n_pos: usize,
}

fn disk_point(d: &EigDecomp, ts: f64, integrator_tol: f64) -> Result<DiskPoint> {
    let n = d.values.len();
    let mut disk = Vec::with_capacity(n);
    let mut reflected = Vec::with_capacity(n);
    let mut integrator = Vec::with_capacity(n);
    let (mut n_int, mut n_real, mut n_pos) = (0usize, 0usize, 0usize);
    for &v in &d.values {
        if v.norm() <= integrator_tol {
            integrator.push(true);
            n_int += 1;
            disk.push(C64::new(1.0, 0.0));
            reflected.push(false);
        } else {
            integrator.push(false);
            let (z, r) = to_disk(v, ts)?;
            disk.push(z);
            reflected.push(r);
            if v.im == 0.0 {
                n_real += 1;
            } else if v.im > 0.0 {
                n_pos += 1;
            }
        }
    }
    Ok(DiskPoint { disk, reflected, integrator, n_int, n_real, n_pos })
}

/// Pairs modes across neighbouring grid points into trajectories.
///
/// Matching runs separately on real modes and on positive-imaginary
/// representatives of conjugate pairs; the negative half of each pair
/// mirrors its representative, which keeps conjugate symmetry exact by
/// construction. Integrators are matched by index.
pub fn match_grid(model: &GridLpvModel, grid: &EigenGrid, cfg: &TrackingConfig) -> Result<TrackedModes> {
    let n = model.n_x;
    let n_pts = grid.decomps.len();
    if n_pts == 0 {
        return Err(LpvError::InvalidModel("empty eigenvalue grid".into()));
    }

    let points: Result<Vec<DiskPoint>> = grid
        .decomps
        .iter()
        .map(|d| disk_point(d, grid.ts, cfg.integrator_tol))
        .collect();
    let points = points?;

    for (k, p) in points.iter().enumerate() {
        let p0 = &points[0];
        if p.n_int != p0.n_int {
            return Err(LpvError::InvalidModel(format!(
                "integrator count changes across the grid: {} at point 0 vs {} at point {k}",
                p0.n_int, p.n_int
            )));
        }
    }

    // order[k][t] = index of trajectory t inside the decomposition at k.
    let mut order: Vec<Vec<usize>> = Vec::with_capacity(n_pts);
    order.push((0..n).collect());

    // Conjugate partners at the reference point; eigenvalue pairs are
    // exact conjugates by construction, so equality search is safe.
    let v0 = &grid.decomps[0].values;
    let mut partner: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if points[0].integrator[i] || v0[i].im <= 0.0 || partner[i].is_some() {
            continue;
        }
        let want = v0[i].conj();
        let j = (0..n)
            .find(|&j| j != i && partner[j].is_none() && !points[0].integrator[j] && v0[j] == want)
            .ok_or_else(|| {
                LpvError::Internal(format!("unpaired complex eigenvalue {} at point 0", v0[i]))
            })?;
        partner[i] = Some(j);
        partner[j] = Some(i);
    }

    let mut ambiguous: Vec<Vec<bool>> = Vec::with_capacity(n_pts - 1);

    for k in 0..n_pts - 1 {
        let cur_order = order[k].clone();
        let dp_next = &points[k + 1];
        let vals_next = &grid.decomps[k + 1].values;
        let mut next = vec![usize::MAX; n];
        let mut amb = vec![false; n];

        // Integrators: i-th integrator trajectory to i-th integrator
        // candidate, both in ascending index order. Integrator status is a
        // property of the trajectory, fixed at the reference point.
        let int_traj: Vec<usize> =
            (0..n).filter(|&t| points[0].integrator[order[0][t]]).collect();
        let int_cand: Vec<usize> = (0..n).filter(|&j| dp_next.integrator[j]).collect();
        for (slot, &t) in int_traj.iter().enumerate() {
            next[t] = int_cand[slot];
        }

        // Character bookkeeping decides the matching strategy: when the
        // real / complex split is the same on both sides, real modes and
        // positive-imaginary representatives are matched independently and
        // the negative halves mirror their representative (conjugate
        // symmetry by construction). When a nearly-repeated real pole
        // jitters into a tight complex pair at isolated points the split
        // differs, and matching falls back to one joint assignment.
        let cur_char = |t: &usize| grid.decomps[k].values[cur_order[*t]].im;
        let active: Vec<usize> =
            (0..n).filter(|&t| !points[0].integrator[order[0][t]]).collect();
        let cur_real = active.iter().filter(|t| cur_char(t) == 0.0).count();
        let cur_pos = active.iter().filter(|t| cur_char(t) > 0.0).count();
        let split_matches = cur_real == dp_next.n_real && cur_pos == dp_next.n_pos;

        // Cost matrix plus the misalignment matrix used as the assignment
        // tie-break: at a crossing the weighted costs of "stay on the
        // eigenvector" and "follow the eigenvalue" both vanish, and only
        // the eigenvector similarity can tell the branches apart.
        let build_cost = |rows: &[usize], cols: &[usize]| -> (Mat, Mat) {
            let misalign = Mat::from_fn(rows.len(), cols.len(), |r, c| {
                1.0 - mode_alignment(
                    &grid.decomps[k].vectors,
                    cur_order[rows[r]],
                    &grid.decomps[k + 1].vectors,
                    cols[c],
                )
            });
            let cost = Mat::from_fn(rows.len(), cols.len(), |r, c| {
                let z1 = points[k].disk[cur_order[rows[r]]];
                let z2 = dp_next.disk[cols[c]];
                if cfg.mac_weighting {
                    hyperbolic_distance(z1, z2) * misalign[(r, c)]
                } else {
                    hyperbolic_distance(z1, z2)
                }
            });
            (cost, misalign)
        };
        let solve = |cost: &Mat, misalign: &Mat| {
            if cfg.mac_weighting {
                min_cost_assignment_tiebreak(cost, cfg.tie_tol, misalign)
            } else {
                min_cost_assignment_lex(cost, cfg.tie_tol)
            }
        };
        let flag_ambiguous = |cost: &Mat, rows: &[usize], amb: &mut Vec<bool>| {
            let m = rows.len();
            for r in 0..m {
                let mut best = f64::INFINITY;
                let mut second = f64::INFINITY;
                for c in 0..m {
                    let v = cost[(r, c)];
                    if v < best {
                        second = best;
                        best = v;
                    } else if v < second {
                        second = v;
                    }
                }
                if m > 1 && second - best < cfg.ambiguity_tol {
                    amb[rows[r]] = true;
                }
            }
        };

        if split_matches {
            for pass in 0..2 {
                let keep = |im: f64| if pass == 0 { im == 0.0 } else { im > 0.0 };
                let rows: Vec<usize> =
                    active.iter().copied().filter(|t| keep(cur_char(t))).collect();
                let cols: Vec<usize> = (0..n)
                    .filter(|&j| !dp_next.integrator[j] && keep(vals_next[j].im))
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let (cost, misalign) = build_cost(&rows, &cols);
                flag_ambiguous(&cost, &rows, &mut amb);
                let sol = solve(&cost, &misalign)?;
                for (r, &t) in rows.iter().enumerate() {
                    next[t] = cols[sol.assignment[r]];
                }
            }

            // Mirror each representative's choice onto its conjugate
            // partner (negative-imaginary trajectories were skipped above;
            // trajectories that are locally real were matched directly).
            // The positive-imaginary member is the representative, whatever
            // its index order relative to the partner.
            for &t in &active {
                let Some(p) = partner[t] else { continue };
                if cur_char(&t) <= 0.0 {
                    continue;
                }
                let j = next[t];
                let jc = conj_candidate(vals_next, &dp_next.integrator, j)?;
                next[p] = jc;
                amb[p] = amb[t];
            }

            // Unpartnered trajectories on the negative-imaginary side (a
            // real pair that turned complex after the reference point is
            // linked only later) take the negative candidates the mirrors
            // left over.
            let neg_rows: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&t| cur_char(&t) < 0.0 && partner[t].is_none())
                .collect();
            if !neg_rows.is_empty() {
                let taken: Vec<bool> = {
                    let mut m = vec![false; n];
                    for &j in next.iter().filter(|&&j| j != usize::MAX) {
                        m[j] = true;
                    }
                    m
                };
                let cols: Vec<usize> = (0..n)
                    .filter(|&j| {
                        !dp_next.integrator[j] && vals_next[j].im < 0.0 && !taken[j]
                    })
                    .collect();
                let (cost, misalign) = build_cost(&neg_rows, &cols);
                flag_ambiguous(&cost, &neg_rows, &mut amb);
                let sol = solve(&cost, &misalign)?;
                for (r, &t) in neg_rows.iter().enumerate() {
                    next[t] = cols[sol.assignment[r]];
                }
            }
        } else {
            let rows = active.clone();
            let cols: Vec<usize> = (0..n).filter(|&j| !dp_next.integrator[j]).collect();
            if !rows.is_empty() {
                let (cost, misalign) = build_cost(&rows, &cols);
                flag_ambiguous(&cost, &rows, &mut amb);
                let sol = solve(&cost, &misalign)?;
                for (r, &t) in rows.iter().enumerate() {
                    next[t] = cols[sol.assignment[r]];
                }
            }
            // Restore conjugate consistency for linked pairs that are
            // still complex on the far side.
            for _round in 0..=n {
                let mut changed = false;
                for &t in &active {
                    let Some(p) = partner[t] else { continue };
                    if t > p || vals_next[next[t]].im == 0.0 {
                        continue;
                    }
                    let jc = conj_candidate(vals_next, &dp_next.integrator, next[t])?;
                    if next[p] != jc {
                        let t2 = (0..n).find(|&x| next[x] == jc).ok_or_else(|| {
                            LpvError::Internal("conjugate candidate unassigned".into())
                        })?;
                        next.swap(p, t2);
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            for &t in &active {
                let Some(p) = partner[t] else { continue };
                if t > p || vals_next[next[t]].im == 0.0 {
                    continue;
                }
                let jc = conj_candidate(vals_next, &dp_next.integrator, next[t])?;
                if next[p] != jc {
                    return Err(LpvError::Internal(format!(
                        "conjugate pairing could not be stabilized at transition {k}"
                    )));
                }
            }
        }

        if next.iter().any(|&j| j == usize::MAX) {
            return Err(LpvError::Internal(format!(
                "incomplete mode assignment at transition {k}"
            )));
        }
        let mut seen = vec![false; n];
        for &j in &next {
            if seen[j] {
                return Err(LpvError::Internal(format!(
                    "mode assignment at transition {k} is not a permutation"
                )));
            }
            seen[j] = true;
        }

        ambiguous.push(amb);
        order.push(next);
    }

    // Assemble trajectories in reference order.
    let mut trajectories = Vec::with_capacity(n);
    for t in 0..n {
        let mut values = Vec::with_capacity(n_pts);
        let mut disk = Vec::with_capacity(n_pts);
        let mut reflected = Vec::with_capacity(n_pts);
        let mut cols = Vec::with_capacity(n_pts);
        for k in 0..n_pts {
            let idx = order[k][t];
            values.push(grid.decomps[k].values[idx]);
            disk.push(points[k].disk[idx]);
            reflected.push(points[k].reflected[idx]);
            cols.push(grid.decomps[k].vectors.column(idx).into_owned());
        }
        let kind = if points[0].integrator[order[0][t]] {
            ModeKind::Integrator
        } else if reflected.iter().any(|&r| r) {
            ModeKind::Unstable
        } else {
            ModeKind::Stable
        };
        trajectories.push(ModeTrajectory {
            values,
            vectors: CMat::from_columns(&cols),
            disk,
            reflected,
            kind,
        });
    }

    // Conjugate symmetry check (exact by construction; tolerate rounding
    // in the check, then snap hard). Points where a linked pair is locally
    // real carry no conjugate constraint — the pair temporarily separated
    // into two distinct real modes.
    let scale = grid.max_abs.max(1.0);
    for t in 0..n {
        let Some(p) = partner[t] else { continue };
        if t > p {
            continue;
        }
        for k in 0..n_pts {
            if trajectories[t].values[k].im == 0.0 {
                continue;
            }
            let want = trajectories[t].values[k].conj();
            let got = trajectories[p].values[k];
            if (got - want).norm() > 1e-8 * scale {
                return Err(LpvError::Internal(format!(
                    "conjugate symmetry lost at grid point {k} ({got} vs {want})"
                )));
            }
            trajectories[p].values[k] = want;
            trajectories[p].disk[k] = trajectories[t].disk[k].conj();
            let col = trajectories[t].vectors.column(k).map(|x| x.conj());
            trajectories[p].vectors.set_column(k, &col);
        }
    }

    Ok(TrackedModes {
        trajectories,
        partner,
        ts: grid.ts,
        rho_grid: model.rho_grid.clone(),
        ambiguous,
    })
}

/// Convenience wrapper: decompose and match in one call.
pub fn track(model: &GridLpvModel, cfg: &TrackingConfig) -> Result<TrackedModes> {
    let grid = decompose_grid(model, cfg)?;
    match_grid(model, &grid, cfg)
}

/// Links unpartnered trajectory pairs that form exact conjugates on the
/// complex part of the grid. [`match_grid`] links pairs that are complex at
/// the reference point; a pair that enters the complex plane only in the
/// grid interior (a complex↔real transition, or a repeated real pole
/// jittering complex) stays unlinked there and is caught here. Linked
/// partners are snapped to exact conjugacy at every complex point. Returns
/// the pairs that were linked.
pub fn link_transition_partners(tracked: &mut TrackedModes) -> Vec<(usize, usize)> {
    let n = tracked.n_modes();
    let n_pts = tracked.n_points();
    let scale = tracked
        .trajectories
        .iter()
        .flat_map(|t| t.values.iter())
        .map(|v| v.norm())
        .fold(1.0f64, f64::max);
    let tol = 1e-8 * scale;
    let mut linked = Vec::new();
    for i in 0..n {
        if tracked.partner[i].is_some() || tracked.trajectories[i].is_integrator() {
            continue;
        }
        let Some(k0) = (0..n_pts).find(|&k| tracked.trajectories[i].values[k].im != 0.0) else {
            continue;
        };
        let want0 = tracked.trajectories[i].values[k0].conj();
        let found = (0..n).find(|&j| {
            j != i
                && tracked.partner[j].is_none()
                && !tracked.trajectories[j].is_integrator()
                && (tracked.trajectories[j].values[k0] - want0).norm() <= tol
                && (0..n_pts).all(|k| {
                    let vi = tracked.trajectories[i].values[k];
                    vi.im == 0.0
                        || (tracked.trajectories[j].values[k] - vi.conj()).norm() <= tol
                })
        });
        let Some(j) = found else { continue };
        tracked.partner[i] = Some(j);
        tracked.partner[j] = Some(i);
        for k in 0..n_pts {
            let vi = tracked.trajectories[i].values[k];
            if vi.im == 0.0 {
                continue;
            }
            tracked.trajectories[j].values[k] = vi.conj();
            tracked.trajectories[j].disk[k] = tracked.trajectories[i].disk[k].conj();
            let col = tracked.trajectories[i].vectors.column(k).map(|x| x.conj());
            tracked.trajectories[j].vectors.set_column(k, &col);
        }
        linked.push((i.min(j), i.max(j)));
    }
    linked
}

/// Distance between two trajectories: the worst pointwise disk distance,
/// taking whichever of `b` and `conj(b)` is closer overall so that a
/// conjugate pair has distance zero to itself.
pub fn trajectory_distance(a: &ModeTrajectory, b: &ModeTrajectory) -> f64 {
    let mut direct = 0.0f64;
    let mut conjugated = 0.0f64;
    for k in 0..a.disk.len() {
        direct = direct.max(hyperbolic_distance(a.disk[k], b.disk[k]));
        conjugated = conjugated.max(hyperbolic_distance(a.disk[k], b.disk[k].conj()));
    }
    direct.min(conjugated)
}

/// Like [`trajectory_distance`], but each pointwise term is weighted by
/// eigenvector misalignment.
pub fn trajectory_distance_weighted(a: &ModeTrajectory, b: &ModeTrajectory) -> f64 {
    let n_pts = a.disk.len();
    let mut direct = 0.0f64;
    let mut conjugated = 0.0f64;
    for k in 0..n_pts {
        let align = mode_alignment(&a.vectors, k, &b.vectors, k);
        direct = direct.max(weighted_distance(a.disk[k], b.disk[k], align));
        // Conjugating the trajectory conjugates its vectors too, which
        // leaves |v₁ᴴ v₂| unchanged only up to the pairing; recompute
        // against the conjugate column.
        let bcol = b.vectors.column(k).map(|x| x.conj());
        let inner: C64 = a.vectors.column(k).dotc(&bcol);
        let na = a.vectors.column(k).norm();
        let nb = bcol.norm();
        let align_c = if na == 0.0 || nb == 0.0 { 0.0 } else { (inner.norm() / (na * nb)).min(1.0) };
        conjugated = conjugated.max(weighted_distance(a.disk[k], b.disk[k].conj(), align_c));
    }
    direct.min(conjugated)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups canonical non-integrator trajectories whose mutual trajectory
/// distance stays below `tol` (numerically repeated modes). Returns all
/// groups, singletons included, ordered by smallest member.
pub fn detect_multiplicity(tracked: &TrackedModes, tol: f64) -> Vec<Vec<usize>> {
    let idx: Vec<usize> = tracked
        .canonical_indices()
        .into_iter()
        .filter(|&i| !tracked.trajectories[i].is_integrator())
        .collect();
    let m = idx.len();
    let mut uf = UnionFind::new(m);
    for a in 0..m {
        for b in a + 1..m {
            let d = trajectory_distance(&tracked.trajectories[idx[a]], &tracked.trajectories[idx[b]]);
            if d <= tol {
                uf.union(a, b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); m];
    for a in 0..m {
        let r = uf.find(a);
        groups[r].push(idx[a]);
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Serializes trajectories to CSV (one row per mode per grid point).
pub fn trajectories_csv(tm: &TrackedModes) -> String {
    let mut out = String::from("mode,point,rho,re,im,disk_re,disk_im,reflected,kind\n");
    for (i, tr) in tm.trajectories.iter().enumerate() {
        for k in 0..tm.n_points() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                i,
                k,
                tm.rho_grid[k],
                tr.values[k].re,
                tr.values[k].im,
                tr.disk[k].re,
                tr.disk[k].im,
                tr.reflected[k] as u8,
                tr.kind.as_str()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridPoint;
    use approx::assert_relative_eq;

    fn model_from_a(rho_grid: Vec<f64>, a_of_rho: impl Fn(f64) -> Mat) -> GridLpvModel {
        let points: Vec<GridPoint> = rho_grid
            .iter()
            .map(|&r| {
                let a = a_of_rho(r);
                let n = a.nrows();
                GridPoint {
                    rho: r,
                    a,
                    b: Mat::zeros(n, 1),
                    c: Mat::zeros(1, n),
                    d: Mat::zeros(1, 1),
                }
            })
            .collect();
        GridLpvModel::from_points(points, 0.1).unwrap()
    }

    #[test]
    fn disk_map_and_reflection() {
        let (z, r) = to_disk(C64::new(-1.0, 0.0), 0.01).unwrap();
        assert!(!r);
        assert_relative_eq!(z.re, (-0.01f64).exp(), epsilon = 1e-15);
        assert_eq!(z.im, 0.0);

        let (z, r) = to_disk(C64::new(1.0, 0.0), 0.01).unwrap();
        assert!(r);
        assert_relative_eq!(z.re, (-0.01f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn disk_map_rejects_unit_circle() {
        let err = to_disk(C64::new(0.0, 1.0), 0.01).unwrap_err();
        assert!(matches!(err, LpvError::ImaginaryAxis { .. }));
    }

    #[test]
    fn hyperbolic_distance_examples() {
        assert_relative_eq!(
            hyperbolic_distance(C64::new(0.5, 0.0), C64::new(-0.5, 0.0)),
            0.8,
            epsilon = 1e-15
        );
        let z = C64::new(0.3, -0.4);
        assert_eq!(hyperbolic_distance(z, z), 0.0);
        // Symmetry.
        let w = C64::new(-0.1, 0.7);
        assert_relative_eq!(
            hyperbolic_distance(z, w),
            hyperbolic_distance(w, z),
            epsilon = 1e-15
        );
    }

    #[test]
    fn auto_sampling_time_rule() {
        // Large eigenvalues shrink the step below the 0.01 cap.
        let m = model_from_a(vec![0.0, 1.0], |_| {
            Mat::from_row_slice(2, 2, &[-100.0, 0.0, 0.0, -1.0])
        });
        let g = decompose_grid(&m, &TrackingConfig::default()).unwrap();
        assert_relative_eq!(g.ts, 0.5 / 100.0, epsilon = 1e-15);

        let m = model_from_a(vec![0.0, 1.0], |_| {
            Mat::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -1.0])
        });
        let g = decompose_grid(&m, &TrackingConfig::default()).unwrap();
        assert_eq!(g.ts, 0.01);
    }

    #[test]
    fn fixed_sampling_aliasing_guard() {
        let m = model_from_a(vec![0.0, 1.0], |_| {
            Mat::from_row_slice(2, 2, &[-0.1, 100.0, -100.0, -0.1])
        });
        let cfg = TrackingConfig { sampling: SamplingTime::Fixed(0.1), ..Default::default() };
        let err = decompose_grid(&m, &cfg).unwrap_err();
        assert!(matches!(err, LpvError::Aliasing { .. }));
    }

    #[test]
    fn tracks_complex_pair() {
        let m = model_from_a((0..11).map(|i| 1.0 + 0.1 * i as f64).collect(), |r| {
            Mat::from_row_slice(2, 2, &[-0.1, r, -r, -0.1])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        assert_eq!(tm.n_modes(), 2);
        assert_eq!(tm.partner[0], Some(1));
        let t0 = &tm.trajectories[0];
        for (k, &rho) in tm.rho_grid.iter().enumerate() {
            assert_relative_eq!(t0.values[k].re, -0.1, epsilon = 1e-10);
            assert_relative_eq!(t0.values[k].im.abs(), rho, epsilon = 1e-10);
            // Exact conjugate pairing.
            assert_eq!(tm.trajectories[1].values[k], t0.values[k].conj());
        }
        assert_eq!(t0.kind, ModeKind::Stable);
    }

    #[test]
    fn crossing_real_modes_follow_eigenvectors() {
        // Two decoupled real modes whose eigenvalues cross; eigenvector
        // weighting must keep each trajectory on its own state.
        let grid: Vec<f64> = (0..21).map(|i| 0.05 + 0.1 * i as f64).collect();
        let m = model_from_a(grid, |r| {
            Mat::from_row_slice(2, 2, &[-1.0 - r, 0.0, 0.0, -3.0 + r])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        for (k, &rho) in tm.rho_grid.iter().enumerate() {
            let vals: Vec<f64> = (0..2).map(|t| tm.trajectories[t].values[k].re).collect();
            let mut got = vals.clone();
            let mut want = vec![-1.0 - rho, -3.0 + rho];
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            assert_relative_eq!(got[0], want[0], epsilon = 1e-10);
            assert_relative_eq!(got[1], want[1], epsilon = 1e-10);
        }
        // Each trajectory is smooth (no swap): values move monotonically.
        for t in 0..2 {
            let tr = &tm.trajectories[t];
            let d0 = tr.values[1].re - tr.values[0].re;
            for k in 1..tm.n_points() - 1 {
                let d = tr.values[k + 1].re - tr.values[k].re;
                assert!(d * d0 > 0.0, "trajectory {t} kinked at {k}");
            }
        }
    }

    #[test]
    fn integrators_are_excluded_and_index_matched() {
        let m = model_from_a(vec![0.0, 0.5, 1.0], |r| {
            Mat::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, -1.0 - r, 0.0, 0.0, 0.0, -2.0])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let kinds: Vec<ModeKind> = tm.trajectories.iter().map(|t| t.kind).collect();
        assert_eq!(kinds.iter().filter(|&&k| k == ModeKind::Integrator).count(), 1);
        let int_traj = tm
            .trajectories
            .iter()
            .find(|t| t.kind == ModeKind::Integrator)
            .unwrap();
        for k in 0..3 {
            assert_eq!(int_traj.values[k], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn unstable_mode_is_reflected_and_labelled() {
        let m = model_from_a(vec![0.0, 1.0], |r| {
            Mat::from_row_slice(2, 2, &[0.5 + r, 0.0, 0.0, -1.0])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let unstable = tm.trajectories.iter().find(|t| t.is_unstable()).unwrap();
        for k in 0..2 {
            assert!(unstable.reflected[k]);
            assert!(unstable.disk[k].norm() < 1.0);
        }
    }

    #[test]
    fn trajectory_distance_of_conjugate_pair_is_zero() {
        let m = model_from_a(vec![1.0, 1.5, 2.0], |r| {
            Mat::from_row_slice(2, 2, &[-0.1, r, -r, -0.1])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let d = trajectory_distance(&tm.trajectories[0], &tm.trajectories[1]);
        assert!(d < 1e-14, "conjugate pair distance {d}");
    }

    #[test]
    fn multiplicity_detection_groups_repeated_modes() {
        // Two identical decoupled modes plus one far away.
        let m = model_from_a(vec![0.0, 0.5, 1.0], |r| {
            Mat::from_row_slice(3, 3, &[-1.0 - r, 0.0, 0.0, 0.0, -1.0 - r, 0.0, 0.0, 0.0, -8.0])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let groups = detect_multiplicity(&tm, 1e-4);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups.iter().map(|g| g.len()).max(), Some(2));
    }

    #[test]
    fn ambiguity_flags_for_identical_candidates() {
        let m = model_from_a(vec![0.0, 1.0], |_| {
            Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])
        });
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        assert!(tm.ambiguous[0].iter().all(|&a| a));
    }

    #[test]
    fn csv_export_shape() {
        let m = model_from_a(vec![0.0, 1.0], |r| Mat::from_row_slice(1, 1, &[-1.0 - r]));
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let csv = trajectories_csv(&tm);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2);
        assert!(lines[0].starts_with("mode,point,rho"));
        assert!(lines[1].ends_with("stable"));
    }
}
