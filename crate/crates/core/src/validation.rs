//! Quantitative comparison of full and reduced models: ν-gap over a
//! frequency grid (pointwise in ρ and frequency-wise), time-domain LPV
//! simulation under scheduling trajectories with bounded rate, and pole
//! maps for export.

use crate::error::{LpvError, Result};
use crate::model::{AnyModel, GridLpvModel, LtiSnapshot, ReducedLpvModel};
use crate::numerics::FreqResponder;
use crate::sim::{chirp_signal, rk4, step_signal, SimOutput};
use crate::{C64, CMat, Mat, Vec64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Frequency grid
// ---------------------------------------------------------------------------

/// Strictly increasing positive angular frequencies.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyGrid {
    pub omegas: Vec<f64>,
}

impl FrequencyGrid {
    /// `count` log-spaced frequencies over `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(LpvError::InvalidConfig(format!(
                "frequency grid needs 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        if count < 2 {
            return Err(LpvError::InvalidConfig(format!(
                "frequency grid needs at least 2 points, got {count}"
            )));
        }
        let (llo, lhi) = (lo.log10(), hi.log10());
        let omegas = (0..count)
            .map(|i| 10f64.powf(llo + (lhi - llo) * i as f64 / (count - 1) as f64))
            .collect();
        Ok(FrequencyGrid { omegas })
    }

    /// 400 log-spaced points over `[1e−3, 1e3]` rad/s.
    pub fn default_grid() -> Self {
        Self::log_spaced(1e-3, 1e3, 400).expect("constants are valid")
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

// ---------------------------------------------------------------------------
// ν-gap
// ---------------------------------------------------------------------------

/// Inverse principal square root of a Hermitian positive definite matrix.
fn inv_sqrt_hermitian(m: &CMat) -> CMat {
    let se = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut out = CMat::zeros(n, n);
    for i in 0..n {
        // Eigenvalues of I + GGᴴ are ≥ 1, so the inverse square root is
        // well conditioned; clamp guards rounding.
        let lam = se.eigenvalues[i].max(1e-300);
        let col = se.eigenvectors.column(i);
        let scale = C64::new(1.0 / lam.sqrt(), 0.0);
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] += col[r] * scale * col[c].conj();
            }
        }
    }
    out
}

/// Chordal distance between two frequency-response matrices:
/// `σ_max((I + G2G2ᴴ)^{−1/2} (G1 − G2) (I + G1ᴴG1)^{−1/2})`, in [0, 1].
pub fn chordal_distance(g1: &CMat, g2: &CMat) -> f64 {
    let n_y = g1.nrows();
    let n_u = g1.ncols();
    let left = inv_sqrt_hermitian(&(CMat::identity(n_y, n_y) + g2 * g2.adjoint()));
    let right = inv_sqrt_hermitian(&(CMat::identity(n_u, n_u) + g1.adjoint() * g1));
    let m = left * (g1 - g2) * right;
    let sv = m.singular_values();
    let top = if sv.is_empty() { 0.0 } else { sv[0] };
    top.clamp(0.0, 1.0)
}

/// Max over the frequency grid of the chordal distance between the two
/// snapshots (the frequency-gridded ν-gap without the winding-number
/// qualification).
pub fn nu_gap(g1: &LtiSnapshot, g2: &LtiSnapshot, fgrid: &FrequencyGrid) -> Result<f64> {
    let r1 = FreqResponder::new(g1);
    let r2 = FreqResponder::new(g2);
    let mut max = 0.0f64;
    for &w in &fgrid.omegas {
        let h1 = r1.eval(w)?;
        let h2 = r2.eval(w)?;
        max = max.max(chordal_distance(&h1, &h2));
    }
    Ok(max)
}

// ---------------------------------------------------------------------------
// Gap evaluation across the scheduling range
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GapSample {
    pub rho: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyGapSample {
    pub omega: f64,
    pub gap: f64,
}

/// Grid points plus the midpoints between consecutive grid points.
pub fn grid_with_midpoints(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len() - 1);
    for k in 0..grid.len() {
        out.push(grid[k]);
        if k + 1 < grid.len() {
            out.push(0.5 * (grid[k] + grid[k + 1]));
        }
    }
    out
}

/// Chordal distances for every (ρ sample, ω) pair; rows follow `samples`,
/// columns follow `fgrid`.
fn gap_matrix(
    full: &GridLpvModel,
    reduced: &ReducedLpvModel,
    fgrid: &FrequencyGrid,
    samples: &[f64],
) -> Result<Mat> {
    let rows: Result<Vec<Vec<f64>>> = samples
        .par_iter()
        .map(|&rho| {
            let gf = full.interpolate(rho)?;
            let gr = reduced.interpolate(rho)?;
            let rf = FreqResponder::new(&gf);
            let rr = FreqResponder::new(&gr);
            fgrid
                .omegas
                .iter()
                .map(|&w| Ok(chordal_distance(&rf.eval(w)?, &rr.eval(w)?)))
                .collect()
        })
        .collect();
    let rows = rows?;
    Ok(Mat::from_fn(samples.len(), fgrid.len(), |r, c| rows[r][c]))
}

/// ν-gap per ρ sample (max over the frequency grid).
pub fn pointwise_gap(
    full: &GridLpvModel,
    reduced: &ReducedLpvModel,
    fgrid: &FrequencyGrid,
    samples: &[f64],
) -> Result<Vec<GapSample>> {
    let m = gap_matrix(full, reduced, fgrid, samples)?;
    Ok(samples
        .iter()
        .enumerate()
        .map(|(r, &rho)| GapSample {
            rho,
            gap: (0..m.ncols()).map(|c| m[(r, c)]).fold(0.0, f64::max),
        })
        .collect())
}

/// Max-over-ρ chordal distance per frequency.
pub fn frequencywise_gap(
    full: &GridLpvModel,
    reduced: &ReducedLpvModel,
    fgrid: &FrequencyGrid,
    samples: &[f64],
) -> Result<Vec<FrequencyGapSample>> {
    let m = gap_matrix(full, reduced, fgrid, samples)?;
    Ok(fgrid
        .omegas
        .iter()
        .enumerate()
        .map(|(c, &omega)| FrequencyGapSample {
            omega,
            gap: (0..m.nrows()).map(|r| m[(r, c)]).fold(0.0, f64::max),
        })
        .collect())
}

/// Both gap profiles from one shared distance matrix.
pub fn gap_profiles(
    full: &GridLpvModel,
    reduced: &ReducedLpvModel,
    fgrid: &FrequencyGrid,
    samples: &[f64],
) -> Result<(Vec<GapSample>, Vec<FrequencyGapSample>)> {
    let m = gap_matrix(full, reduced, fgrid, samples)?;
    let pointwise = samples
        .iter()
        .enumerate()
        .map(|(r, &rho)| GapSample {
            rho,
            gap: (0..m.ncols()).map(|c| m[(r, c)]).fold(0.0, f64::max),
        })
        .collect();
    let frequencywise = fgrid
        .omegas
        .iter()
        .enumerate()
        .map(|(c, &omega)| FrequencyGapSample {
            omega,
            gap: (0..m.nrows()).map(|r| m[(r, c)]).fold(0.0, f64::max),
        })
        .collect();
    Ok((pointwise, frequencywise))
}

// ---------------------------------------------------------------------------
// Time-domain simulation
// ---------------------------------------------------------------------------

/// Input signal shape on a single channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    Step,
    Chirp { f0: f64, f1: f64 },
}

/// Scheduling trajectory shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `ρ(t) = center + amplitude·sin(frequency·t)`.
    Sine { center: f64, amplitude: f64, frequency: f64 },
    /// Frozen schedule.
    Constant { value: f64 },
}

impl Schedule {
    /// `(ρ, ρ̇)` at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match *self {
            Schedule::Sine { center, amplitude, frequency } => (
                center + amplitude * (frequency * t).sin(),
                amplitude * frequency * (frequency * t).cos(),
            ),
            Schedule::Constant { value } => (value, 0.0),
        }
    }
}

/// One simulation comparison scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub name: String,
    pub channel: usize,
    pub input: InputSignal,
    pub schedule: Schedule,
    pub t_end: f64,
    pub dt: f64,
}

/// Result of a simulation with scheduling-validity warnings.
#[derive(Debug)]
pub struct SimRun {
    pub output: SimOutput,
    pub warnings: Vec<String>,
}

/// Integrates either model kind under `(ρ(t), ρ̇(t))` and `u(t)` with
/// fixed-step RK4. Reduced models interpolate the state matrix linearly
/// in ρ̇ between the two rate vertices; full models ignore ρ̇.
pub fn simulate(
    model: &AnyModel,
    schedule: &Schedule,
    input: &dyn Fn(f64) -> Vec64,
    t_end: f64,
    dt: f64,
) -> Result<SimRun> {
    if !(dt > 0.0 && dt.is_finite() && t_end > 0.0 && t_end.is_finite()) {
        return Err(LpvError::InvalidConfig(format!(
            "simulation needs positive finite t_end and dt, got t_end={t_end}, dt={dt}"
        )));
    }
    let (grid, delta, n_x) = match model {
        AnyModel::Full(m) => (&m.rho_grid, m.rate_bound, m.n_x),
        AnyModel::Reduced(m) => (&m.rho_grid, m.rate_bound, m.n_x),
    };
    let lo = grid[0];
    let hi = *grid.last().unwrap();

    // Scheduling validity scan (range and rate), warning on violation.
    let mut warnings = Vec::new();
    let steps = (t_end / dt).ceil() as usize;
    let mut range_bad: Option<f64> = None;
    let mut rate_bad: Option<f64> = None;
    for i in 0..=steps {
        let t = i as f64 * dt;
        let (rho, rhodot) = schedule.eval(t);
        if range_bad.is_none() && !(rho >= lo && rho <= hi) {
            range_bad = Some(t);
        }
        if rate_bad.is_none() && rhodot.abs() > delta * (1.0 + 1e-9) {
            rate_bad = Some(t);
        }
    }
    if let Some(t) = range_bad {
        warnings.push(format!(
            "schedule leaves the grid range [{lo}, {hi}] at t = {t:.4}; values are clamped"
        ));
    }
    if let Some(t) = rate_bad {
        warnings.push(format!(
            "schedule rate exceeds the bound {delta} at t = {t:.4}; results extrapolate the rate vertices"
        ));
    }

    let output = match model {
        AnyModel::Full(m) => {
            let deriv = |t: f64, x: &Vec64| {
                let (rho, _) = schedule.eval(t);
                let s = m.interpolate(rho.clamp(lo, hi)).expect("clamped");
                &s.a * x + &s.b * input(t)
            };
            let out = |t: f64, x: &Vec64| {
                let (rho, _) = schedule.eval(t);
                let s = m.interpolate(rho.clamp(lo, hi)).expect("clamped");
                &s.c * x + &s.d * input(t)
            };
            rk4(deriv, out, Vec64::zeros(n_x), t_end, dt)
        }
        AnyModel::Reduced(m) => {
            let deriv = |t: f64, x: &Vec64| {
                let (rho, rhodot) = schedule.eval(t);
                let rho = rho.clamp(lo, hi);
                let a = m.a_at(rho, rhodot).expect("clamped");
                let s = m.interpolate(rho).expect("clamped");
                a * x + &s.b * input(t)
            };
            let out = |t: f64, x: &Vec64| {
                let (rho, _) = schedule.eval(t);
                let s = m.interpolate(rho.clamp(lo, hi)).expect("clamped");
                &s.c * x + &s.d * input(t)
            };
            rk4(deriv, out, Vec64::zeros(n_x), t_end, dt)
        }
    };
    if let Some(time) = output.diverged {
        return Err(LpvError::Divergence { time });
    }
    Ok(SimRun { output, warnings })
}

/// Per-scenario outcome of a full-vs-reduced simulation comparison.
#[derive(Debug, Clone, Serialize)]
pub struct SimComparison {
    pub scenario: String,
    /// Relative L2 discrepancy ‖y_full − y_red‖ / ‖y_full‖.
    pub discrepancy: f64,
    pub warnings: Vec<String>,
}

/// Runs every scenario on both models and reports relative L2 output
/// discrepancies. Scenarios run in parallel.
pub fn compare_simulations(
    full: &GridLpvModel,
    reduced: &ReducedLpvModel,
    scenarios: &[SimScenario],
) -> Result<Vec<SimComparison>> {
    let full_any = AnyModel::Full(full.clone());
    let red_any = AnyModel::Reduced(reduced.clone());
    scenarios
        .par_iter()
        .map(|sc| {
            let input: Box<dyn Fn(f64) -> Vec64 + Sync> = match sc.input {
                InputSignal::Step => Box::new(step_signal(full.n_u, sc.channel)),
                InputSignal::Chirp { f0, f1 } => {
                    Box::new(chirp_signal(full.n_u, sc.channel, f0, f1, sc.t_end))
                }
            };
            let a = simulate(&full_any, &sc.schedule, &*input, sc.t_end, sc.dt)?;
            let b = simulate(&red_any, &sc.schedule, &*input, sc.t_end, sc.dt)?;
            let discrepancy =
                crate::sim::relative_l2_discrepancy(&a.output, &b.output, sc.dt);
            let mut warnings = a.warnings;
            warnings.extend(b.warnings);
            Ok(SimComparison { scenario: sc.name.clone(), discrepancy, warnings })
        })
        .collect()
}

/// Default comparison scenarios: a rate-respecting sinusoidal schedule
/// and a frozen mid-range schedule, stepped and chirped on each input
/// channel. `dt` is sized against the fastest full-model dynamics.
pub fn default_scenarios(model: &GridLpvModel) -> Vec<SimScenario> {
    let lo = model.rho_grid[0];
    let hi = *model.rho_grid.last().unwrap();
    let center = 0.5 * (lo + hi);
    let span = hi - lo;
    let amplitude = 0.25 * span;
    let delta = model.rate_bound;
    // amplitude·frequency = max|ρ̇| must respect the rate bound.
    let frequency = if amplitude > 0.0 && delta > 0.0 {
        (0.2f64).min(0.8 * delta / amplitude)
    } else {
        0.2
    };
    let a_scale = model
        .points
        .iter()
        .map(|p| crate::numerics::spectral_norm(&p.a))
        .fold(1.0f64, f64::max);
    let dt = (0.2 / a_scale).min(0.01);
    let t_end = 20.0f64;
    let mut out = Vec::new();
    for ch in 0..model.n_u {
        let sine = if delta > 0.0 && amplitude > 0.0 {
            Schedule::Sine { center, amplitude, frequency }
        } else {
            Schedule::Constant { value: center }
        };
        out.push(SimScenario {
            name: format!("step_u{ch}_sine_rho"),
            channel: ch,
            input: InputSignal::Step,
            schedule: sine,
            t_end,
            dt,
        });
        out.push(SimScenario {
            name: format!("chirp_u{ch}_frozen_rho"),
            channel: ch,
            input: InputSignal::Chirp { f0: 0.05, f1: 2.0 },
            schedule: Schedule::Constant { value: center },
            t_end,
            dt,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Pole maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoleRow {
    pub k: usize,
    pub rho: f64,
    pub re: f64,
    pub im: f64,
}

/// Eigenvalue loci over the grid; reduced models use the ρ̇ = 0 state
/// matrix (the average of the two rate vertices).
pub fn pole_map(model: &AnyModel) -> Vec<PoleRow> {
    let (grid, mats): (&[f64], Vec<&Mat>) = match model {
        AnyModel::Full(m) => (&m.rho_grid, m.points.iter().map(|p| &p.a).collect()),
        AnyModel::Reduced(m) => (&m.rho_grid, m.points.iter().map(|p| &p.a).collect()),
    };
    let mut rows = Vec::new();
    for (k, a) in mats.iter().enumerate() {
        let eigs = a.complex_eigenvalues();
        let mut pts: Vec<(f64, f64)> = eigs.iter().map(|l| (l.re, l.im)).collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        for (re, im) in pts {
            rows.push(PoleRow { k, rho: grid[k], re, im });
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub pointwise: Vec<GapSample>,
    pub frequencywise: Vec<FrequencyGapSample>,
    pub max_gap: f64,
    pub simulations: Vec<SimComparison>,
    pub max_sim_discrepancy: f64,
    pub wall_time_s: f64,
}

/// Full validation pass: gaps on grid + midpoints over the frequency
/// grid, plus the simulation scenarios.
pub fn validate_models(
    full: &GridLpvModel,
    reduced: &ReducedLpvModel,
    fgrid: &FrequencyGrid,
    rho_samples: Option<&[f64]>,
    scenarios: &[SimScenario],
) -> Result<ValidationReport> {
    let started = std::time::Instant::now();
    let default_samples;
    let samples: &[f64] = match rho_samples {
        Some(s) => s,
        None => {
            default_samples = grid_with_midpoints(&full.rho_grid);
            &default_samples
        }
    };
    let (pointwise, frequencywise) = gap_profiles(full, reduced, fgrid, samples)?;
    let max_gap = pointwise.iter().map(|s| s.gap).fold(0.0, f64::max);
    let simulations = compare_simulations(full, reduced, scenarios)?;
    let max_sim_discrepancy = simulations
        .iter()
        .map(|s| s.discrepancy)
        .fold(0.0, f64::max);
    Ok(ValidationReport {
        pointwise,
        frequencywise,
        max_gap,
        simulations,
        max_sim_discrepancy,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
