//! Modal transformation: real block-diagonalizing transforms built from
//! tracked (and smoothed) eigenvectors, the modal-form grid model, and the
//! ρ̇-dependent coupling term.
//!
//! For each grid point the transform `T̄_k` stacks `Re(v)` for real modes
//! and `[Re(v) Im(v)]` for each conjugate pair, turning `A_k` into a block
//! diagonal matrix of 1×1 entries and 2×2 blocks `[[a, b], [−b, a]]`.
//! Because the transform varies with ρ, the transformed dynamics pick up
//! the extra term `Ē(ρ, ρ̇) = −T̄⁻¹ (∂T̄/∂ρ) ρ̇`, evaluated at the rate
//! vertices `ρ̇ = ±δ`; a simulation study decides whether that coupling can
//! be neglected.

use crate::error::{LpvError, Result};
use crate::model::{GridLpvModel, LtiSnapshot};
use crate::numerics::{spectral_norm, CubicSpline};
use crate::sim::{chirp_signal, rk4, relative_l2_discrepancy, step_signal, TriangleWave};
use crate::tracking::{ModeKind, TrackedModes};
use crate::{Mat, Vec64};
use rayon::prelude::*;

/// Knobs for modal assembly and the coupling significance test.
#[derive(Debug, Clone)]
pub struct ModalConfig {
    /// Condition bound above which a local transform counts as singular.
    pub cond_max: f64,
    /// Relative L2 output discrepancy below which the coupling term is
    /// declared negligible.
    pub drop_tol: f64,
}

impl Default for ModalConfig {
    fn default() -> Self {
        Self { cond_max: 1e12, drop_tol: 0.05 }
    }
}

/// One diagonal block of the modal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeBlock {
    /// Trajectory represented by this block (the canonical member for a
    /// conjugate pair).
    pub trajectory: usize,
    /// The mirrored partner trajectory for 2×2 blocks.
    pub partner: Option<usize>,
    /// First state index of the block.
    pub start: usize,
    /// 1 for real modes, 2 for conjugate pairs.
    pub size: usize,
    pub kind: ModeKind,
}

/// The modal-form grid model.
#[derive(Debug, Clone)]
pub struct ModalForm {
    pub transforms: Vec<Mat>,
    pub inverses: Vec<Mat>,
    /// Cubic spline through the local transforms (the source of ∂T̄/∂ρ).
    pub spline: CubicSpline,
    pub blocks: Vec<ModeBlock>,
    /// Block-diagonal state matrices `T̄_k⁻¹ A_k T̄_k`.
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub c: Vec<Mat>,
    pub d: Vec<Mat>,
    /// `Ē_{k,s} = e_base[k] · ν_s` with `ν_s ∈ {−δ, +δ}`.
    pub e_base: Vec<Mat>,
    pub rho_grid: Vec<f64>,
    pub rate_bound: f64,
    pub n_u: usize,
    pub n_y: usize,
}

/// Outcome of the coupling significance study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CouplingReport {
    /// `‖Ē_{k,+δ}‖₂` per grid point.
    pub e_norms: Vec<f64>,
    /// Largest `‖T̄⁻¹ A T̄ − Ā‖₂` at inter-grid midpoints (the
    /// interpolation term the grid representation silently neglects).
    pub midpoint_residual_max: f64,
    /// Relative L2 output discrepancies, one per excitation scenario.
    pub discrepancies: Vec<f64>,
    pub max_discrepancy: f64,
    /// Whether the coupling term can be dropped.
    pub neglect: bool,
    /// Set when a simulation diverged (forces "keep").
    pub divergence_note: Option<String>,
}

impl ModalForm {
    pub fn n_x(&self) -> usize {
        self.transforms[0].nrows()
    }

    pub fn n_points(&self) -> usize {
        self.rho_grid.len()
    }

    /// Coupling matrix at grid point `k` and rate `nu`.
    pub fn coupling(&self, k: usize, nu: f64) -> Mat {
        &self.e_base[k] * nu
    }

    /// Frozen-parameter snapshot at grid point `k` (ρ̇ = 0).
    pub fn frozen(&self, k: usize) -> LtiSnapshot {
        LtiSnapshot {
            rho: self.rho_grid[k],
            a: self.a[k].clone(),
            b: self.b[k].clone(),
            c: self.c[k].clone(),
            d: self.d[k].clone(),
        }
    }

    /// `(start, size)` of every block, the support pattern of the modal
    /// state matrix.
    pub fn block_pattern(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| (b.start, b.size)).collect()
    }

    /// Largest off-block magnitude of `a[k]` relative to `‖a[k]‖₂`.
    pub fn off_block_residual(&self, k: usize) -> f64 {
        let a = &self.a[k];
        let n = a.nrows();
        let mut inside = vec![usize::MAX; n];
        for (bi, b) in self.blocks.iter().enumerate() {
            for i in b.start..b.start + b.size {
                inside[i] = bi;
            }
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if inside[i] != inside[j] {
                    worst = worst.max(a[(i, j)].abs());
                }
            }
        }
        let scale = spectral_norm(a);
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    fn interp(&self, mats: &[Mat], rho: f64) -> Mat {
        let (k, t) = crate::model::bracket(&self.rho_grid, rho)
            .expect("schedule clamped to the grid range");
        crate::model::lerp(&mats[k], &mats[k + 1], t)
    }
}

/// Builds the real local transforms and the block layout from tracked
/// trajectories (canonical order: ascending trajectory index).
pub fn build_local_transforms(
    tracked: &TrackedModes,
    cfg: &ModalConfig,
) -> Result<(Vec<Mat>, Vec<ModeBlock>)> {
    let n = tracked.n_modes();
    let n_pts = tracked.n_points();

    let mut blocks = Vec::new();
    let mut start = 0usize;
    for t in 0..n {
        if !tracked.is_canonical(t) {
            continue;
        }
        let partner = tracked.partner[t];
        let size = if partner.is_some() { 2 } else { 1 };
        blocks.push(ModeBlock {
            trajectory: t,
            partner,
            start,
            size,
            kind: tracked.trajectories[t].kind,
        });
        start += size;
    }
    if start != n {
        return Err(LpvError::Internal(format!(
            "block layout covers {start} states, expected {n}"
        )));
    }

    let mut transforms = Vec::with_capacity(n_pts);
    for k in 0..n_pts {
        let mut t_mat = Mat::zeros(n, n);
        for b in &blocks {
            let tr = &tracked.trajectories[b.trajectory];
            let v = tr.vectors.column(k);
            for i in 0..n {
                t_mat[(i, b.start)] = v[i].re;
            }
            if b.size == 2 {
                if tr.values[k].im != 0.0 {
                    // Complex at this point: real basis (Re v, Im v) of the
                    // conjugate pair's invariant plane.
                    for i in 0..n {
                        t_mat[(i, b.start + 1)] = v[i].im;
                    }
                } else {
                    // Locally real (a transition pair outside its complex
                    // region, or a repaired repeated pole): the partner
                    // carries an independent real eigenvector.
                    let p = b.partner.expect("size-2 block without partner");
                    let vp = tracked.trajectories[p].vectors.column(k);
                    for i in 0..n {
                        t_mat[(i, b.start + 1)] = vp[i].re;
                    }
                }
            }
        }
        let sv = t_mat.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv[0], sv[sv.len() - 1]);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !cond.is_finite() || cond > cfg.cond_max {
            return Err(LpvError::SingularTransform { point: Some(k), cond, max: cfg.cond_max });
        }
        transforms.push(t_mat);
    }
    Ok((transforms, blocks))
}

/// Assembles the complete modal form: transformed grid matrices, the
/// transform spline, and the coupling bases.
pub fn assemble_modal(
    model: &GridLpvModel,
    tracked: &TrackedModes,
    cfg: &ModalConfig,
) -> Result<ModalForm> {
    let (transforms, blocks) = build_local_transforms(tracked, cfg)?;
    let n_pts = transforms.len();

    let spline = CubicSpline::fit(&model.rho_grid, &transforms)?;

    let inverses: Result<Vec<Mat>> = transforms
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            t.clone().try_inverse().ok_or(LpvError::SingularTransform {
                point: Some(k),
                cond: f64::INFINITY,
                max: cfg.cond_max,
            })
        })
        .collect();
    let inverses = inverses?;

    let mut a = Vec::with_capacity(n_pts);
    let mut b = Vec::with_capacity(n_pts);
    let mut c = Vec::with_capacity(n_pts);
    let mut d = Vec::with_capacity(n_pts);
    let mut e_base = Vec::with_capacity(n_pts);
    for k in 0..n_pts {
        let ti = &inverses[k];
        let t = &transforms[k];
        let p = &model.points[k];
        a.push(ti * &p.a * t);
        b.push(ti * &p.b);
        c.push(&p.c * t);
        d.push(p.d.clone());
        e_base.push(-(ti * spline.derivative(model.rho_grid[k])));
    }

    Ok(ModalForm {
        transforms,
        inverses,
        spline,
        blocks,
        a,
        b,
        c,
        d,
        e_base,
        rho_grid: model.rho_grid.clone(),
        rate_bound: model.rate_bound,
        n_u: model.n_u,
        n_y: model.n_y,
    })
}

/// Simulates the modal system with and without the coupling term along
/// worst-case triangular scheduling sweeps under a bank of step and chirp
/// inputs, and recommends dropping Ē when the outputs barely differ.
pub fn coupling_significance(
    modal: &ModalForm,
    model: &GridLpvModel,
    cfg: &ModalConfig,
) -> CouplingReport {
    let delta = modal.rate_bound;
    let e_norms: Vec<f64> = modal.e_base.iter().map(|e| spectral_norm(e) * delta).collect();

    // Interpolation residual at inter-grid midpoints, for the report.
    let mut midpoint_residual_max = 0.0f64;
    for k in 0..modal.n_points() - 1 {
        let rho_m = 0.5 * (modal.rho_grid[k] + modal.rho_grid[k + 1]);
        let t_m = modal.spline.evaluate(rho_m);
        let Some(ti_m) = t_m.clone().try_inverse() else {
            midpoint_residual_max = f64::INFINITY;
            continue;
        };
        let a_m = match model.interpolate(rho_m) {
            Ok(s) => s.a,
            Err(_) => continue,
        };
        let mut a_bar_m = modal.a[k].clone();
        a_bar_m.zip_apply(&modal.a[k + 1], |x, y| *x = 0.5 * (*x + y));
        midpoint_residual_max =
            midpoint_residual_max.max(spectral_norm(&(ti_m * a_m * t_m - a_bar_m)));
    }

    let a_scale = modal.a.iter().map(spectral_norm).fold(0.0f64, f64::max);
    let e_scale = e_norms.iter().copied().fold(0.0f64, f64::max);

    if delta == 0.0 || e_scale <= 1e-14 * a_scale.max(1.0) {
        return CouplingReport {
            e_norms,
            midpoint_residual_max,
            discrepancies: vec![],
            max_discrepancy: 0.0,
            neglect: true,
            divergence_note: None,
        };
    }

    let lo = modal.rho_grid[0];
    let hi = *modal.rho_grid.last().unwrap();
    let dt = (0.5 / (a_scale + e_scale).max(1.0)).min(0.01);
    let sweep = TriangleWave { lo, hi, rate: delta, ascending: true };
    let t_end = sweep.period().min(50.0);

    // Scenario bank: (input kind, channel, sweep direction).
    #[derive(Clone, Copy)]
    enum Input {
        Step,
        Chirp,
    }
    let mut scenarios = Vec::new();
    for ch in 0..modal.n_u {
        for input in [Input::Step, Input::Chirp] {
            for ascending in [true, false] {
                scenarios.push((input, ch, ascending));
            }
        }
    }

    let runs: Vec<(f64, Option<f64>)> = scenarios
        .par_iter()
        .map(|&(input, ch, ascending)| {
            let wave = TriangleWave { ascending, ..sweep };
            let u: Box<dyn Fn(f64) -> Vec64 + Sync> = match input {
                Input::Step => Box::new(step_signal(modal.n_u, ch)),
                Input::Chirp => Box::new(chirp_signal(modal.n_u, ch, 0.1, 5.0, t_end)),
            };
            let simulate = |with_coupling: bool| {
                let deriv = |t: f64, x: &Vec64| {
                    let (rho, rhodot) = wave.eval(t);
                    let mut a_rho = modal.interp(&modal.a, rho);
                    if with_coupling {
                        a_rho += modal.interp(&modal.e_base, rho) * rhodot;
                    }
                    let b_rho = modal.interp(&modal.b, rho);
                    a_rho * x + b_rho * u(t)
                };
                let output = |t: f64, x: &Vec64| {
                    let (rho, _) = wave.eval(t);
                    let c_rho = modal.interp(&modal.c, rho);
                    let d_rho = modal.interp(&modal.d, rho);
                    c_rho * x + d_rho * u(t)
                };
                rk4(deriv, output, Vec64::zeros(modal.n_x()), t_end, dt)
            };
            let with_e = simulate(true);
            let without_e = simulate(false);
            let diverged = with_e.diverged.or(without_e.diverged);
            (relative_l2_discrepancy(&with_e, &without_e, dt), diverged)
        })
        .collect();

    let discrepancies: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let max_discrepancy = discrepancies.iter().copied().fold(0.0f64, f64::max);
    let divergence_note = runs
        .iter()
        .find_map(|r| r.1)
        .map(|t| format!("simulation diverged at t = {t:.3}; coupling kept"));
    let neglect = divergence_note.is_none() && max_discrepancy <= cfg.drop_tol;

    CouplingReport {
        e_norms,
        midpoint_residual_max,
        discrepancies,
        max_discrepancy,
        neglect,
        divergence_note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridPoint;
    use crate::numerics::{eig_decompose, freq_response, COND_MAX_DEFAULT};
    use crate::tracking::{track, TrackingConfig};
    use approx::assert_relative_eq;

    fn model_from(
        rho_grid: Vec<f64>,
        rate: f64,
        a: impl Fn(f64) -> Mat,
        b: impl Fn(f64) -> Mat,
        c: impl Fn(f64) -> Mat,
    ) -> GridLpvModel {
        let points: Vec<GridPoint> = rho_grid
            .iter()
            .map(|&r| {
                let am = a(r);
                let bm = b(r);
                let cm = c(r);
                let d = Mat::zeros(cm.nrows(), bm.ncols());
                GridPoint { rho: r, a: am, b: bm, c: cm, d }
            })
            .collect();
        GridLpvModel::from_points(points, rate).unwrap()
    }

    fn rot2(theta: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn real_modes_give_diagonal_modal_form() {
        let m = model_from(
            vec![0.0, 0.5, 1.0],
            0.1,
            |r| Mat::from_row_slice(2, 2, &[-1.0 - r, 0.0, 0.0, -4.0]),
            |_| Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            |_| Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        assert_eq!(modal.blocks.len(), 2);
        assert!(modal.blocks.iter().all(|b| b.size == 1));
        for k in 0..3 {
            assert!(modal.off_block_residual(k) < 1e-12);
        }
    }

    #[test]
    fn complex_pair_gives_skew_block() {
        let (a0, b0) = (-0.5, 2.0);
        let m = model_from(
            vec![0.0, 1.0],
            0.1,
            |r| Mat::from_row_slice(2, 2, &[a0, b0 + r, -(b0 + r), a0]),
            |_| Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            |_| Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        assert_eq!(modal.blocks.len(), 1);
        assert_eq!(modal.blocks[0].size, 2);
        for (k, &rho) in modal.rho_grid.iter().enumerate() {
            let blk = &modal.a[k];
            assert_relative_eq!(blk[(0, 0)], a0, epsilon = 1e-10);
            assert_relative_eq!(blk[(1, 1)], a0, epsilon = 1e-10);
            assert_relative_eq!(blk[(0, 1)], b0 + rho, epsilon = 1e-10);
            assert_relative_eq!(blk[(1, 0)], -(b0 + rho), epsilon = 1e-10);
        }
    }

    #[test]
    fn frozen_transfer_functions_match_original() {
        // A(ρ) = Q(ρ) Λ(ρ) Q(ρ)ᵀ with a mildly rotating eigenbasis.
        let grid: Vec<f64> = (0..6).map(|i| i as f64 * 0.2).collect();
        let m = model_from(
            grid,
            0.1,
            |r| {
                let q = rot2(0.3 * r);
                &q * Mat::from_row_slice(2, 2, &[-1.0 - r, 0.0, 0.0, -3.0 + r]) * q.transpose()
            },
            |_| Mat::from_row_slice(2, 1, &[1.0, -1.0]),
            |_| Mat::from_row_slice(1, 2, &[2.0, 0.5]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        for k in 0..modal.n_points() {
            let orig = LtiSnapshot {
                rho: m.rho_grid[k],
                a: m.points[k].a.clone(),
                b: m.points[k].b.clone(),
                c: m.points[k].c.clone(),
                d: m.points[k].d.clone(),
            };
            let frozen = modal.frozen(k);
            for &omega in &[0.01, 0.1, 1.0, 10.0] {
                let g0 = freq_response(&orig, omega).unwrap();
                let g1 = freq_response(&frozen, omega).unwrap();
                let rel = (&g0 - &g1).norm() / g0.norm().max(1e-30);
                assert!(rel < 1e-8, "TF mismatch {rel} at point {k}, ω = {omega}");
            }
        }
    }

    #[test]
    fn eigenvalues_preserved_by_similarity() {
        let m = model_from(
            vec![0.0, 0.5, 1.0],
            0.1,
            |r| {
                let q = rot2(0.5 * r);
                &q * Mat::from_row_slice(2, 2, &[-2.0 - r, 0.0, 0.0, -7.0]) * q.transpose()
            },
            |_| Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            |_| Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        for k in 0..modal.n_points() {
            let mut orig: Vec<f64> = eig_decompose(&m.points[k].a, COND_MAX_DEFAULT)
                .unwrap()
                .values
                .iter()
                .map(|z| z.re)
                .collect();
            let mut got: Vec<f64> = eig_decompose(&modal.a[k], COND_MAX_DEFAULT)
                .unwrap()
                .values
                .iter()
                .map(|z| z.re)
                .collect();
            orig.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            for (o, g) in orig.iter().zip(got.iter()) {
                assert_relative_eq!(o, g, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn constant_eigenvectors_drop_coupling() {
        let q = rot2(0.4);
        let m = model_from(
            vec![0.0, 0.5, 1.0],
            0.2,
            |r| &q * Mat::from_row_slice(2, 2, &[-1.0 - r, 0.0, 0.0, -3.0 + 0.5 * r]) * q.transpose(),
            |_| Mat::from_row_slice(2, 1, &[1.0, 0.5]),
            |_| Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        let report = coupling_significance(&modal, &m, &ModalConfig::default());
        assert!(report.e_norms.iter().all(|&e| e < 1e-10), "{:?}", report.e_norms);
        assert!(report.neglect);
        assert_eq!(report.max_discrepancy, 0.0);
    }

    #[test]
    fn zero_rate_bound_drops_coupling() {
        let m = model_from(
            vec![0.0, 1.0],
            0.0,
            |r| {
                let q = rot2(2.0 * r);
                &q * Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -5.0]) * q.transpose()
            },
            |_| Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            |_| Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        let report = coupling_significance(&modal, &m, &ModalConfig::default());
        assert!(report.neglect);
    }

    #[test]
    fn strong_rotation_keeps_coupling() {
        // Fast eigenbasis rotation at a high rate bound: Ē is comparable
        // to A itself and shows up in the outputs.
        let grid: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let m = model_from(
            grid,
            2.0,
            |r| {
                let q = rot2(3.0 * r);
                &q * Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -6.0]) * q.transpose()
            },
            |_| Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            |_| Mat::from_row_slice(1, 2, &[1.0, -1.0]),
        );
        let tm = track(&m, &TrackingConfig::default()).unwrap();
        let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
        let report = coupling_significance(&modal, &m, &ModalConfig::default());
        assert!(!report.neglect, "max discrepancy {}", report.max_discrepancy);
    }
}
