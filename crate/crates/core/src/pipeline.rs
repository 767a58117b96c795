//! End-to-end model reduction: eigenvalue tracking, transition handling,
//! Remark-style repair, Procrustes smoothing, modal decomposition, coupling
//! significance, trajectory clustering, parameter-varying Gramians, and
//! per-cluster balanced truncation, assembled into one deterministic run
//! with a structured report.

use crate::balred::{
    balance_and_truncate, balancing_factors, reassemble, select_order, OrderSelection,
    ReducedSubsystem,
};
use crate::clustering::{
    cophenetic_coefficient, coupling_energy, hac_complete_link, permute_and_split,
    trajectory_distances, ClusterPartition, Dendrogram,
};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::export;
use crate::gramian::{compute_gramians, LmiReport};
use crate::modal::{assemble_modal, coupling_significance, CouplingReport};
use crate::model::{GridLpvModel, ReducedLpvModel};
use crate::smoothing::{
    choose_start, repair_complex_real, smooth_sequence, RepairEvent, SmoothingReport,
};
use crate::tracking::{
    decompose_grid, detect_multiplicity, link_transition_partners, match_grid,
    trajectory_distance, ModeKind,
};
use crate::validation::{default_scenarios, validate_models, ValidationReport};
use crate::Vec64;
use serde::Serialize;
use std::time::Instant;

/// Wall-clock time of one pipeline stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

/// Dendrogram-level outcome of the clustering stage.
#[derive(Debug, Clone, Serialize)]
pub struct ClusteringSummary {
    /// Absent when fewer than two stable trajectories were available.
    pub dendrogram: Option<Dendrogram>,
    pub threshold: f64,
    /// Trajectory ids used as dendrogram leaves (stable modes, both
    /// members of each conjugate pair).
    pub leaves: Vec<usize>,
    /// States per cluster, in cluster order.
    pub cluster_sizes: Vec<usize>,
    /// Cophenetic correlation; absent for fewer than three leaves or a
    /// degenerate distance spread.
    pub cophenetic: Option<f64>,
    pub preserved_states: usize,
    pub partition: ClusterPartition,
}

/// Per-cluster Gramian and truncation outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    pub cluster: usize,
    /// Member trajectory ids.
    pub trajectories: Vec<usize>,
    pub n_states: usize,
    /// Kept order (equals `n_states` when the cluster passed through).
    pub kept: usize,
    pub reduced: bool,
    /// Inflation factor accepted by the Gramian feasibility loop.
    pub inflation: f64,
    pub trace_history: Vec<f64>,
    pub lmi: LmiReport,
    pub selection: Option<OrderSelection>,
    pub warnings: Vec<String>,
}

/// Full provenance of one reduction run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub n_x: usize,
    pub n_red: usize,
    pub timings: Vec<StageTiming>,
    /// Trajectory groups recognized as genuine complex↔real transitions
    /// (kept as 2×2 blocks, excluded from repair and smoothing).
    pub transitions: Vec<Vec<usize>>,
    pub repairs: Vec<RepairEvent>,
    pub smoothing: SmoothingReport,
    pub coupling: CouplingReport,
    /// Whether the parameter-rate coupling term was dropped.
    pub coupling_dropped: bool,
    pub clustering: ClusteringSummary,
    pub clusters: Vec<ClusterReport>,
    pub validation: ValidationReport,
    pub warnings: Vec<String>,
}

/// Reduced model plus the report and the plot-ready artifacts.
#[derive(Debug, Clone)]
pub struct ReductionOutput {
    pub model: ReducedLpvModel,
    pub report: RunReport,
    /// Tracked-eigenvalue CSV (`k,rho,traj_index,re_lambda,im_lambda,stability_label`).
    pub trajectory_csv: String,
    pub dendrogram_text: String,
    /// Per cluster: scheduling grid and aligned singular-value vectors
    /// (empty vectors for pass-through clusters).
    pub sigma_trajectories: Vec<(Vec<f64>, Vec<Vec64>)>,
}

fn push_timing(timings: &mut Vec<StageTiming>, stage: &'static str, t0: Instant) {
    timings.push(StageTiming {
        stage,
        seconds: t0.elapsed().as_secs_f64(),
    });
}

/// Runs the complete reduction pipeline on `model` and validates the
/// result against it. Stage failures carry the stage name.
pub fn run_reduction(model: &GridLpvModel, cfg: &PipelineConfig) -> Result<ReductionOutput> {
    cfg.validate()?;
    model.validate().map_err(|e| e.in_stage("input"))?;

    let tcfg = cfg.tracking_config();
    let scfg = cfg.smoothing_config();
    let mcfg = cfg.modal_config();
    let ccfg = cfg.cluster_config();
    let gcfg = cfg.gramian_config();

    let mut timings = Vec::new();
    let mut warnings: Vec<String> = Vec::new();

    // Eigen-decomposition of every grid point.
    let t0 = Instant::now();
    let grid = decompose_grid(model, &tcfg).map_err(|e| e.in_stage("eigendecomposition"))?;
    push_timing(&mut timings, "eigendecomposition", t0);

    // Trajectory matching across the grid, then linking of conjugate pairs
    // that only become complex away from the reference point.
    let t0 = Instant::now();
    let mut tracked =
        match_grid(model, &grid, &tcfg).map_err(|e| e.in_stage("mode_matching"))?;
    let late_links = link_transition_partners(&mut tracked);
    for &(i, j) in &late_links {
        warnings.push(format!(
            "trajectories {i} and {j} form a conjugate pair away from the reference point; linked"
        ));
    }
    let ambiguous_count: usize = tracked
        .ambiguous
        .iter()
        .map(|row| row.iter().filter(|&&a| a).count())
        .sum();
    if ambiguous_count > 0 {
        warnings.push(format!(
            "{ambiguous_count} trajectory transition(s) had near-tied assignment costs"
        ));
    }
    push_timing(&mut timings, "mode_matching", t0);

    // Multiplicity groups, separated into repairable (tightly repeated,
    // possibly jittering complex) and genuine complex↔real transitions.
    let t0 = Instant::now();
    let mult_tol = cfg.tracking.multiplicity_threshold;
    let mult_groups = detect_multiplicity(&tracked, mult_tol);
    let mut repair_groups: Vec<Vec<usize>> = Vec::new();
    let mut transitions: Vec<Vec<usize>> = Vec::new();
    for g in &mult_groups {
        let mut aug = g.clone();
        for &t in g {
            if let Some(p) = tracked.partner[t] {
                if !aug.contains(&p) {
                    aug.push(p);
                }
            }
        }
        aug.sort_unstable();
        let mixed = aug
            .iter()
            .any(|&t| tracked.trajectories[t].is_mixed_character());
        if !mixed {
            repair_groups.push(aug);
            continue;
        }
        let tight = aug.iter().all(|&a| {
            aug.iter().all(|&b| {
                b <= a
                    || trajectory_distance(&tracked.trajectories[a], &tracked.trajectories[b])
                        <= mult_tol
            })
        });
        if tight {
            repair_groups.push(aug);
        } else {
            warnings.push(format!(
                "trajectories {aug:?} transition between complex and real; kept as a block, \
                 excluded from eigenvalue repair and Procrustes smoothing"
            ));
            transitions.push(aug);
        }
    }
    push_timing(&mut timings, "multiplicity_detection", t0);

    // Realify repeated poles that jitter complex at isolated points.
    let t0 = Instant::now();
    let mut work_model = model.clone();
    let repairs = repair_complex_real(&mut tracked, &repair_groups, &mut work_model, &scfg)
        .map_err(|e| e.in_stage("eigenvalue_repair"))?;
    push_timing(&mut timings, "eigenvalue_repair", t0);

    // Procrustes smoothing; repaired (now real-everywhere) linked pairs are
    // smoothed jointly, genuine transitions keep their raw vectors.
    let t0 = Instant::now();
    let in_transition =
        |t: usize| transitions.iter().any(|grp| grp.contains(&t));
    let mut smoothing_groups: Vec<Vec<usize>> = Vec::new();
    for g in &mult_groups {
        if g.iter().any(|&t| in_transition(t)) {
            continue;
        }
        let mut grp = g.clone();
        for &t in g {
            if let Some(p) = tracked.partner[t] {
                let real_everywhere =
                    tracked.trajectories[t].values.iter().all(|v| v.im == 0.0);
                if real_everywhere && !grp.contains(&p) {
                    grp.push(p);
                }
            }
        }
        grp.sort_unstable();
        smoothing_groups.push(grp);
    }
    let integrator_group: Vec<usize> = (0..tracked.n_modes())
        .filter(|&t| tracked.is_canonical(t) && tracked.trajectories[t].is_integrator())
        .collect();
    if !integrator_group.is_empty() {
        smoothing_groups.push(integrator_group);
    }
    let k_star = choose_start(&grid);
    let smoothing = smooth_sequence(&mut tracked, &smoothing_groups, k_star, &work_model, &scfg)
        .map_err(|e| e.in_stage("procrustes_smoothing"))?;
    push_timing(&mut timings, "procrustes_smoothing", t0);

    // Modal form.
    let t0 = Instant::now();
    let mut modal =
        assemble_modal(&work_model, &tracked, &mcfg).map_err(|e| e.in_stage("modal_form"))?;
    push_timing(&mut timings, "modal_form", t0);

    // Coupling significance; a negligible rate term is dropped for the
    // rest of the pipeline.
    let t0 = Instant::now();
    let coupling = coupling_significance(&modal, &work_model, &mcfg);
    let coupling_dropped = coupling.neglect;
    if coupling_dropped {
        for e in &mut modal.e_base {
            e.fill(0.0);
        }
    }
    if let Some(note) = &coupling.divergence_note {
        warnings.push(format!("coupling significance study: {note}"));
    }
    push_timing(&mut timings, "coupling_test", t0);

    // Hierarchical clustering of the stable trajectories.
    let t0 = Instant::now();
    let leaves: Vec<usize> = (0..tracked.n_modes())
        .filter(|&t| tracked.trajectories[t].kind == ModeKind::Stable)
        .collect();
    let (dendrogram, clusters_tid, threshold, cophenetic) = if leaves.len() < 2 {
        if leaves.is_empty() {
            warnings.push("no stable trajectories: nothing to reduce".into());
        }
        let clusters: Vec<Vec<usize>> = if leaves.is_empty() {
            Vec::new()
        } else {
            vec![leaves.clone()]
        };
        (None, clusters, 0.0, None)
    } else {
        let weighted = cfg.tracking.mac_weighting;
        let (mut dist, forced) = trajectory_distances(&tracked, &leaves, weighted);
        if cfg.clustering.e2_penalty_weight > 0.0 {
            let energy = coupling_energy(&modal, &leaves);
            dist += energy * cfg.clustering.e2_penalty_weight;
        }
        let dendro = hac_complete_link(&dist, &forced).map_err(|e| e.in_stage("clustering"))?;
        let (leaf_clusters, threshold) = dendro
            .cut_with_cap(&ccfg)
            .map_err(|e| e.in_stage("clustering"))?;
        let clusters: Vec<Vec<usize>> = leaf_clusters
            .iter()
            .map(|c| {
                let mut tids: Vec<usize> = c.iter().map(|&li| leaves[li]).collect();
                tids.sort_unstable();
                tids
            })
            .collect();
        let coph = cophenetic_coefficient(&dendro, &dist)
            .ok()
            .filter(|c| c.is_finite());
        (Some(dendro), clusters, threshold, coph)
    };
    push_timing(&mut timings, "clustering", t0);

    // Permutation into block-diagonal cluster order; unstable modes and
    // integrators land in the trailing preserved range.
    let t0 = Instant::now();
    let clustered = permute_and_split(&modal, &clusters_tid, threshold)
        .map_err(|e| e.in_stage("splitting"))?;
    push_timing(&mut timings, "splitting", t0);

    // Per-cluster Gramians and balanced truncation. Infeasible clusters
    // pass through unreduced; genuine numerical failures abort.
    let mut gramian_seconds = 0.0f64;
    let mut balred_seconds = 0.0f64;
    let mut cluster_reports: Vec<ClusterReport> = Vec::new();
    let mut reduced_subs: Vec<Option<ReducedSubsystem>> = Vec::new();
    let mut sigma_trajectories: Vec<(Vec<f64>, Vec<Vec64>)> = Vec::new();
    for l in 0..clustered.n_clusters() {
        let sub = clustered.subsystem(l);
        let n_states = sub.a[0].nrows();
        let trajectories = clustered.partition.clusters[l].clone();

        let t0 = Instant::now();
        let outcome = compute_gramians(&sub, &gcfg).map_err(|e| e.in_stage("gramians"))?;
        gramian_seconds += t0.elapsed().as_secs_f64();

        let mut cluster_warnings = outcome.warnings.clone();
        if !outcome.report.feasible {
            warnings.push(format!(
                "cluster {l}: Gramian LMIs infeasible; passes through unreduced"
            ));
            cluster_reports.push(ClusterReport {
                cluster: l,
                trajectories,
                n_states,
                kept: n_states,
                reduced: false,
                inflation: outcome.inflation,
                trace_history: outcome.trace_history,
                lmi: outcome.report,
                selection: None,
                warnings: cluster_warnings,
            });
            reduced_subs.push(None);
            sigma_trajectories.push((sub.rho_grid.clone(), Vec::new()));
            continue;
        }

        let t0 = Instant::now();
        let factors = balancing_factors(&outcome.x_o, &outcome.x_c, &sub.rho_grid)
            .map_err(|e| e.in_stage("balanced_truncation"))?;
        let selection = select_order(&factors, cfg.selection_rule(l), cfg.reduction_mode());
        let rsub = balance_and_truncate(&sub, &factors, &selection)
            .map_err(|e| e.in_stage("balanced_truncation"))?;
        balred_seconds += t0.elapsed().as_secs_f64();

        cluster_warnings.extend(factors.warnings.iter().cloned());
        cluster_warnings.extend(rsub.warnings.iter().cloned());
        cluster_reports.push(ClusterReport {
            cluster: l,
            trajectories,
            n_states,
            kept: selection.kept,
            reduced: true,
            inflation: outcome.inflation,
            trace_history: outcome.trace_history,
            lmi: outcome.report,
            selection: Some(selection),
            warnings: cluster_warnings,
        });
        sigma_trajectories.push((sub.rho_grid.clone(), factors.s.clone()));
        reduced_subs.push(Some(rsub));
    }
    timings.push(StageTiming { stage: "gramians", seconds: gramian_seconds });
    timings.push(StageTiming { stage: "balanced_truncation", seconds: balred_seconds });

    // Reassembly of the reduced blocks plus the preserved range.
    let t0 = Instant::now();
    let reduced_model =
        reassemble(&clustered, &reduced_subs).map_err(|e| e.in_stage("reassembly"))?;
    push_timing(&mut timings, "reassembly", t0);

    // Validation against the original (pre-repair) model.
    let t0 = Instant::now();
    let fgrid = cfg.frequency_grid()?;
    let scenarios = cfg
        .validation
        .scenarios
        .clone()
        .unwrap_or_else(|| default_scenarios(model));
    let validation = validate_models(
        model,
        &reduced_model,
        &fgrid,
        cfg.validation.rho_samples.as_deref(),
        &scenarios,
    )
    .map_err(|e| e.in_stage("validation"))?;
    push_timing(&mut timings, "validation", t0);

    let trajectory_csv = export::trajectory_csv(&tracked);
    let dendrogram_text = dendrogram
        .as_ref()
        .map(|d| d.render_text())
        .unwrap_or_default();
    let cluster_sizes: Vec<usize> = clustered
        .partition
        .ranges
        .iter()
        .map(|&(s, e)| e - s)
        .collect();
    let preserved_states =
        clustered.partition.preserved_range.1 - clustered.partition.preserved_range.0;

    let report = RunReport {
        config: cfg.clone(),
        n_x: model.n_x,
        n_red: reduced_model.n_x,
        timings,
        transitions,
        repairs,
        smoothing,
        coupling,
        coupling_dropped,
        clustering: ClusteringSummary {
            dendrogram,
            threshold,
            leaves,
            cluster_sizes,
            cophenetic,
            preserved_states,
            partition: clustered.partition.clone(),
        },
        clusters: cluster_reports,
        validation,
        warnings,
    };

    Ok(ReductionOutput {
        model: reduced_model,
        report,
        trajectory_csv,
        dendrogram_text,
        sigma_trajectories,
    })
}
