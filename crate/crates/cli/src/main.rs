//! `lpvred` command line: benchmark generation, pipeline reduction,
//! validation, and model inspection.
//!
//! Exit codes: 0 when every stage succeeds (and, for `validate`, the gap
//! bound holds), 2 when `validate` finds a maximum pointwise ν-gap above
//! the configured bound, 1 on any error.

use clap::{Parser, Subcommand};
use lpvred::benchgen::{generate, BenchmarkSpec};
use lpvred::config::PipelineConfig;
use lpvred::export;
use lpvred::pipeline::run_reduction;
use lpvred::tracking::{track, ModeKind, TrackingConfig};
use lpvred::validation::{default_scenarios, pole_map, validate_models};
use lpvred::{AnyModel, GridLpvModel, LpvError, ReducedLpvModel, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lpvred",
    version,
    about = "Model order reduction for grid-based LPV systems",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration JSON; omitted fields use the documented
    /// defaults, unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for generate/reduce/validate artifacts
    /// (default "."); for `info`, an optional pole-map CSV path.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Cap on worker threads for per-cluster and per-grid-point stages
    /// [default: available cores].
    #[arg(long, global = true, value_name = "N",
          value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,

    /// Override the seed from the configuration or benchmark spec.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark model plus its ground truth.
    Generate {
        /// Benchmark spec JSON; the built-in 80-state default when omitted.
        spec: Option<PathBuf>,
    },
    /// Reduce a full grid model; writes the reduced model, the run report,
    /// and plot-ready CSV artifacts.
    Reduce {
        /// Full grid model JSON.
        model: PathBuf,
    },
    /// Compare a reduced model against its full-order original.
    Validate {
        /// Full grid model JSON.
        full: PathBuf,
        /// Reduced model JSON.
        reduced: PathBuf,
    },
    /// Print dimensions, scheduling grid, and a stability census.
    Info {
        /// Model JSON (full or reduced).
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
        {
            eprintln!("error: failed to configure {jobs} worker thread(s): {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate { spec } => cmd_generate(spec.as_deref(), cli),
        Command::Reduce { model } => cmd_reduce(model, cli),
        Command::Validate { full, reduced } => cmd_validate(full, reduced, cli),
        Command::Info { model } => cmd_info(model, cli),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_full(path: &Path) -> Result<GridLpvModel> {
    match AnyModel::load(path)? {
        AnyModel::Full(m) => Ok(m),
        AnyModel::Reduced(_) => Err(LpvError::InvalidModel(format!(
            "{} is a reduced model; a full grid model is required here",
            path.display()
        ))),
    }
}

fn load_reduced(path: &Path) -> Result<ReducedLpvModel> {
    match AnyModel::load(path)? {
        AnyModel::Reduced(m) => Ok(m),
        AnyModel::Full(_) => Err(LpvError::InvalidModel(format!(
            "{} is a full grid model; a reduced model is required here",
            path.display()
        ))),
    }
}

/// Records every file written into the output directory and removes all of
/// them when a later step fails, so aborted runs never leave a partial
/// artifact set behind.
struct ArtifactSink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactSink {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| LpvError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        export::write_text_atomic(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        export::write_json_atomic(&path, value)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn discard(&mut self) {
        for p in self.written.drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn with_sink<T>(dir: &Path, f: impl FnOnce(&mut ArtifactSink) -> Result<T>) -> Result<T> {
    let mut sink = ArtifactSink::new(dir)?;
    match f(&mut sink) {
        Ok(v) => Ok(v),
        Err(e) => {
            sink.discard();
            Err(e)
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_generate(spec_path: Option<&Path>, cli: &Cli) -> Result<ExitCode> {
    let mut spec = match spec_path {
        Some(p) => BenchmarkSpec::load(p)?,
        None => BenchmarkSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let (model, truth) = generate(&spec)?;
    let dir = out_dir(cli);
    let (model_path, truth_path) = with_sink(&dir, |sink| {
        let m = sink.write_text("model.json", &model.to_json()?)?;
        let t = sink.write_json("truth.json", &truth)?;
        Ok((m, t))
    })?;
    println!(
        "generated {} states, {} inputs, {} outputs on {} grid points (seed {})",
        model.n_x,
        model.n_u,
        model.n_y,
        model.rho_grid.len(),
        spec.seed
    );
    println!("model: {}", model_path.display());
    println!("ground truth: {}", truth_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_reduce(model_path: &Path, cli: &Cli) -> Result<ExitCode> {
    let model = load_full(model_path)?;
    let cfg = load_config(cli)?;
    let out = run_reduction(&model, &cfg)?;
    let dir = out_dir(cli);
    with_sink(&dir, |sink| {
        sink.write_text("reduced.json", &out.model.to_json()?)?;
        sink.write_json("report.json", &out.report)?;
        sink.write_text("trajectories.csv", &out.trajectory_csv)?;
        sink.write_text(
            "sigma.csv",
            &export::singular_values_csv(&out.sigma_trajectories),
        )?;
        sink.write_text(
            "clusters.csv",
            &export::cluster_assignment_csv(&out.report.clustering.partition),
        )?;
        if !out.dendrogram_text.is_empty() {
            sink.write_text("dendrogram.txt", &out.dendrogram_text)?;
        }
        Ok(())
    })?;
    let rep = &out.report;
    println!(
        "reduced {} -> {} states in {} cluster(s); max pointwise nu-gap {:.3e}",
        rep.n_x,
        rep.n_red,
        rep.clusters.len(),
        rep.validation.max_gap
    );
    for w in &rep.warnings {
        println!("warning: {w}");
    }
    println!("artifacts in {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(full_path: &Path, reduced_path: &Path, cli: &Cli) -> Result<ExitCode> {
    let full = load_full(full_path)?;
    let reduced = load_reduced(reduced_path)?;
    if full.n_u != reduced.n_u || full.n_y != reduced.n_y {
        return Err(LpvError::InvalidModel(format!(
            "I/O dimensions differ: full model has {} output(s) x {} input(s), \
             reduced has {} x {}",
            full.n_y, full.n_u, reduced.n_y, reduced.n_u
        )));
    }
    let cfg = load_config(cli)?;
    let fgrid = cfg.frequency_grid()?;
    let scenarios = cfg
        .validation
        .scenarios
        .clone()
        .unwrap_or_else(|| default_scenarios(&full));
    let report = validate_models(
        &full,
        &reduced,
        &fgrid,
        cfg.validation.rho_samples.as_deref(),
        &scenarios,
    )?;
    let dir = out_dir(cli);
    with_sink(&dir, |sink| {
        sink.write_json("validation.json", &report)?;
        sink.write_text(
            "pointwise_gap.csv",
            &export::pointwise_gap_csv(&report.pointwise),
        )?;
        sink.write_text(
            "frequencywise_gap.csv",
            &export::frequencywise_gap_csv(&report.frequencywise),
        )?;
        Ok(())
    })?;
    println!(
        "max pointwise nu-gap {:.6} (bound {})",
        report.max_gap, cfg.validation.gap_bound
    );
    println!(
        "max simulation discrepancy {:.6}",
        report.max_sim_discrepancy
    );
    println!("artifacts in {}", dir.display());
    if report.max_gap > cfg.validation.gap_bound {
        eprintln!(
            "gap bound exceeded: {:.6} > {}",
            report.max_gap, cfg.validation.gap_bound
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_info(model_path: &Path, cli: &Cli) -> Result<ExitCode> {
    let model = AnyModel::load(model_path)?;
    match &model {
        AnyModel::Full(m) => {
            println!("kind: full grid LPV model");
            print_common(m.n_x, m.n_u, m.n_y, &m.rho_grid, m.rate_bound);
            let tracked = track(m, &TrackingConfig::default())?;
            let (mut stable, mut unstable, mut mixed, mut integrator) = (0, 0, 0, 0);
            for tr in &tracked.trajectories {
                if tr.kind == ModeKind::Integrator {
                    integrator += 1;
                    continue;
                }
                let pos = tr.values.iter().filter(|v| v.re > 0.0).count();
                if pos == 0 {
                    stable += 1;
                } else if pos == tr.values.len() {
                    unstable += 1;
                } else {
                    mixed += 1;
                }
            }
            println!("stability census (tracked modes):");
            println!("  stable: {stable}");
            println!("  unstable: {unstable}");
            println!("  mixed: {mixed}");
            println!("  integrator: {integrator}");
        }
        AnyModel::Reduced(m) => {
            println!("kind: reduced LPV model (rate-dependent state matrix)");
            print_common(m.n_x, m.n_u, m.n_y, &m.rho_grid, m.rate_bound);
            println!(
                "vertex matrices: {} ({} grid points x 2 rate vertices)",
                2 * m.rho_grid.len(),
                m.rho_grid.len()
            );
            println!(
                "preserved unstable/mixed states: {}",
                m.meta.unstable_states
            );
            println!("preserved integrators: {}", m.meta.integrators);
        }
    }
    if let Some(out) = &cli.out {
        export::write_text_atomic(out, &export::pole_map_csv(&pole_map(&model)))?;
        println!("pole map: {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_common(n_x: usize, n_u: usize, n_y: usize, rho_grid: &[f64], rate_bound: f64) {
    println!("states: {n_x}");
    println!("inputs: {n_u}");
    println!("outputs: {n_y}");
    println!(
        "grid: {} points on [{}, {}]",
        rho_grid.len(),
        rho_grid[0],
        rho_grid.last().unwrap()
    );
    println!("rate bound: {rate_bound}");
}
