//! Temporary diagnostic: violation structure of the affine Gramian fit on
//! the default benchmark's largest cluster.

use lpvred::clustering::{hac_complete_link, permute_and_split, trajectory_distances};
use lpvred::config::PipelineConfig;
use lpvred::gramian::{hankel_singular_values, init_pointwise, verify_lmi};
use lpvred::modal::{assemble_modal, coupling_significance};
use lpvred::smoothing::{choose_start, repair_complex_real, smooth_sequence};
use lpvred::tracking::{
    decompose_grid, detect_multiplicity, link_transition_partners, match_grid,
    trajectory_distance, ModeKind,
};
use lpvred::Mat;

fn main() {
    let spec = lpvred::benchgen::BenchmarkSpec {
        seed: 1,
        ..Default::default()
    };
    let (model, _truth) = lpvred::benchgen::generate(&spec).unwrap();
    let cfg = PipelineConfig::default();
    let tcfg = cfg.tracking_config();
    let scfg = cfg.smoothing_config();
    let mcfg = cfg.modal_config();
    let ccfg = cfg.cluster_config();

    let grid = decompose_grid(&model, &tcfg).unwrap();
    let mut tracked = match_grid(&model, &grid, &tcfg).unwrap();
    link_transition_partners(&mut tracked);
    let mult_tol = cfg.tracking.multiplicity_threshold;
    let mult_groups = detect_multiplicity(&tracked, mult_tol);
    let mut repair_groups = Vec::new();
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
            transitions.push(aug);
        }
    }
    let mut work_model = model.clone();
    repair_complex_real(&mut tracked, &repair_groups, &mut work_model, &scfg).unwrap();
    let in_transition = |t: usize| transitions.iter().any(|grp| grp.contains(&t));
    let mut smoothing_groups: Vec<Vec<usize>> = Vec::new();
    for g in &mult_groups {
        if g.iter().any(|&t| in_transition(t)) {
            continue;
        }
        let mut grp = g.clone();
        for &t in g {
            if let Some(p) = tracked.partner[t] {
                let real_everywhere = tracked.trajectories[t].values.iter().all(|v| v.im == 0.0);
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
    smooth_sequence(&mut tracked, &smoothing_groups, k_star, &work_model, &scfg).unwrap();
    let mut modal = assemble_modal(&work_model, &tracked, &mcfg).unwrap();
    let coupling = coupling_significance(&modal, &work_model, &mcfg);
    if coupling.neglect {
        for e in &mut modal.e_base {
            e.fill(0.0);
        }
    }
    let leaves: Vec<usize> = (0..tracked.n_modes())
        .filter(|&t| tracked.trajectories[t].kind == ModeKind::Stable)
        .collect();
    let (dist, forced) = trajectory_distances(&tracked, &leaves, true);
    let dendro = hac_complete_link(&dist, &forced).unwrap();
    let (leaf_clusters, threshold) = dendro.cut_with_cap(&ccfg).unwrap();
    let clusters: Vec<Vec<usize>> = leaf_clusters
        .iter()
        .map(|c| {
            let mut tids: Vec<usize> = c.iter().map(|&li| leaves[li]).collect();
            tids.sort_unstable();
            tids
        })
        .collect();
    let clustered = permute_and_split(&modal, &clusters, threshold).unwrap();

    for l in 0..clustered.n_clusters() {
        let sub = clustered.subsystem(l);
        let n = sub.a[0].nrows();
        println!("=== cluster {l}: n = {n} ===");

        // True pointwise Hankel decay (what truncation should see).
        let mid = sub.rho_grid.len() / 2;
        let hsv = hankel_singular_values(&sub.a[mid], &sub.b[mid], &sub.c[mid]).unwrap();
        let hmax = hsv[0];
        let kept_true = hsv.iter().filter(|&&s| s > 1e-2 * hmax).count();
        println!(
            "  frozen Hankel at mid grid: max {:.3e}, min {:.3e}, kept@1e-2 {}",
            hmax,
            hsv[n - 1],
            kept_true
        );

        // Fit violations.
        let (x_o, x_c) = init_pointwise(&sub).unwrap();
        let margin = lpvred::gramian::default_margin(&sub);
        let rep = verify_lmi(&sub, &x_o, &x_c, margin);
        let worst = rep.worst_residual();
        let q_o = sub
            .c
            .iter()
            .map(|c| lpvred::numerics::spectral_norm(&(c.transpose() * c)))
            .fold(0.0f64, f64::max);
        println!(
            "  margin {:.3e}  worst violation {:.3e}  q_o {:.3e}  ratio {:.3}",
            margin,
            worst,
            q_o,
            worst / q_o
        );
        // Violation distribution across grid points (obs side).
        let mut per_point: Vec<f64> = rep
            .entries
            .iter()
            .map(|e| e.obs_max_eig.max(e.ctrl_max_eig))
            .collect();
        per_point.sort_by(|a, b| b.total_cmp(a));
        println!(
            "  violation quantiles: top {:.3e} p90 {:.3e} median {:.3e}",
            per_point[0],
            per_point[per_point.len() / 10],
            per_point[per_point.len() / 2]
        );
        // Fit error scale.
        let scale_x = lpvred::numerics::spectral_norm(&x_o.x0);
        let a_scale = sub
            .a
            .iter()
            .map(lpvred::numerics::spectral_norm)
            .fold(0.0f64, f64::max);
        println!("  |X_o0| {:.3e}  |A|max {:.3e}", scale_x, a_scale);

        // Pointwise sample norms vs per-point violation: find the poison points.
        let m = sub.rho_grid.len();
        let mut rows = Vec::with_capacity(m);
        for k in 0..m {
            let q = sub.c[k].transpose() * &sub.c[k];
            let xs = lpvred::numerics::solve_lyapunov(&sub.a[k].transpose(), &q).unwrap();
            let viol = rep.entries[2 * k]
                .obs_max_eig
                .max(rep.entries[2 * k + 1].obs_max_eig);
            rows.push((k, sub.rho_grid[k], lpvred::numerics::spectral_norm(&xs), viol));
        }
        rows.sort_by(|a, b| b.3.total_cmp(&a.3));
        println!("  worst obs-violation points (k, rho, |X*_k|, viol):");
        for r in rows.iter().take(6) {
            println!("    k={:3} rho={:.4} |X*|={:.3e} viol={:.3e}", r.0, r.1, r.2, r.3);
        }
        rows.sort_by(|a, b| b.2.total_cmp(&a.2));
        println!("  largest sample norms (k, rho, |X*_k|, viol):");
        for r in rows.iter().take(6) {
            println!("    k={:3} rho={:.4} |X*|={:.3e} viol={:.3e}", r.0, r.1, r.2, r.3);
        }

        // Ctrl side: sample norms and violations.
        let q_c = sub
            .b
            .iter()
            .map(|b| lpvred::numerics::spectral_norm(&(b * b.transpose())))
            .fold(0.0f64, f64::max);
        let mut crows = Vec::with_capacity(m);
        for k in 0..m {
            let q = &sub.b[k] * sub.b[k].transpose();
            let xs = lpvred::numerics::solve_lyapunov(&sub.a[k], &q).unwrap();
            let viol = rep.entries[2 * k]
                .ctrl_max_eig
                .max(rep.entries[2 * k + 1].ctrl_max_eig);
            rows[k] = (k, sub.rho_grid[k], lpvred::numerics::spectral_norm(&xs), viol);
            crows.push(rows[k]);
        }
        crows.sort_by(|a, b| b.3.total_cmp(&a.3));
        println!("  q_c {:.3e}  |X_c0| {:.3e}", q_c, lpvred::numerics::spectral_norm(&x_c.x0));
        println!("  worst ctrl-violation points (k, rho, |Xc*_k|, viol):");
        for r in crows.iter().take(8) {
            println!("    k={:3} rho={:.4} |Xc*|={:.3e} viol={:.3e}", r.0, r.1, r.2, r.3);
        }
        crows.sort_by(|a, b| b.2.total_cmp(&a.2));
        println!("  largest ctrl sample norms (k, rho, |Xc*_k|, viol):");
        for r in crows.iter().take(8) {
            println!("    k={:3} rho={:.4} |Xc*|={:.3e} viol={:.3e}", r.0, r.1, r.2, r.3);
        }
        // Coupling matrix magnitude (enters vertex_a for ctrl LMI).
        let e_scale = sub
            .e1_base
            .iter()
            .map(lpvred::numerics::spectral_norm)
            .fold(0.0f64, f64::max);
        println!("  |E1|max {:.3e}  rate_bound {:.3e}", e_scale, sub.rate_bound);
        let _ = threshold;
        let _: &Mat = &sub.a[0];
    }
}
