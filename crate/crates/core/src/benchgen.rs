//! Random grid-LPV benchmark generation with prescribed eigenvalue
//! trajectory families and retained ground truth.
//!
//! Generation follows a four-step recipe: (1) prescribe λ_i(ρ) per family
//! and assemble a block-diagonal modal A₀(ρ); (2) draw constant B₀, C₀,
//! D₀; (3) apply a parameter-varying similarity T(ρ) = Q(I + ρΔ); (4) fit
//! a degree-`d` polynomial to every matrix entry over the coarse grid
//! (N₀ points) and evaluate it on the final grid (N points). The fitted
//! entries deform the eigenvalues slightly; the drift is recorded and the
//! instance is rejected (T redrawn) if any family label would change.

use crate::error::{LpvError, Result};
use crate::model::{GridLpvModel, GridPoint};
use crate::numerics::eig::eig_decompose;
use crate::{C64, Mat};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// Specification
// ---------------------------------------------------------------------------

/// Number of trajectories per eigenvalue family. Pairs count two states.
/// When a spec file overrides `families`, all seven counts are required;
/// omitting the whole block keeps the 80-state default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCounts {
    /// Parameter-varying stable real eigenvalues (1 state each).
    pub pv_real: usize,
    /// Parameter-varying stable complex conjugate pairs (2 states each).
    pub pv_complex_pairs: usize,
    /// Constant stable real eigenvalues (1 state each).
    pub constant_real: usize,
    /// Repeated real eigenvalues with an intact 2-dim eigenspace
    /// (2 states each).
    pub repeated_groups: usize,
    /// Complex pairs that collapse to two real branches inside the domain
    /// (2 states each).
    pub transition_pairs: usize,
    /// Integrators, identically zero (1 state each).
    pub integrators: usize,
    /// Real eigenvalues crossing the imaginary axis inside the domain
    /// (1 state each).
    pub crossing_real: usize,
}

impl FamilyCounts {
    pub fn n_states(&self) -> usize {
        self.pv_real
            + 2 * self.pv_complex_pairs
            + self.constant_real
            + 2 * self.repeated_groups
            + 2 * self.transition_pairs
            + self.integrators
            + self.crossing_real
    }
}

impl Default for FamilyCounts {
    fn default() -> Self {
        // 22 + 46 + 4 + 2 + 2 + 2 + 2 = 80 states.
        FamilyCounts {
            pv_real: 22,
            pv_complex_pairs: 23,
            constant_real: 4,
            repeated_groups: 1,
            transition_pairs: 1,
            integrators: 2,
            crossing_real: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rate_bound: f64,
    /// Coarse sampling grid used for the polynomial fit.
    pub n0: usize,
    /// Final model grid.
    pub n: usize,
    /// Polynomial degree of the entrywise fit.
    pub degree: usize,
    pub families: FamilyCounts,
    pub seed: u64,
    pub max_retries: usize,
    /// Use T(ρ) = I (LTI-preserving similarity) instead of a random draw.
    pub identity_transform: bool,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_x: 80,
            n_u: 2,
            n_y: 2,
            rho_min: 0.0,
            rho_max: 1.0,
            rate_bound: 0.1,
            n0: 60,
            n: 100,
            degree: 14,
            families: FamilyCounts::default(),
            seed: 0,
            max_retries: 20,
            identity_transform: false,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.families.n_states() != self.n_x {
            return Err(LpvError::InvalidSpec(format!(
                "family block dimensions sum to {}, but n_x = {}",
                self.families.n_states(),
                self.n_x
            )));
        }
        if self.degree >= self.n0 {
            return Err(LpvError::InvalidSpec(format!(
                "polynomial degree {} must be below the coarse grid size {}",
                self.degree, self.n0
            )));
        }
        if self.n < 2 || self.n0 < 2 {
            return Err(LpvError::InvalidSpec(format!(
                "grids need at least 2 points, got N0 = {}, N = {}",
                self.n0, self.n
            )));
        }
        if !(self.rho_max > self.rho_min)
            || !self.rho_min.is_finite()
            || !self.rho_max.is_finite()
        {
            return Err(LpvError::InvalidSpec(format!(
                "parameter domain [{}, {}] is empty or not finite",
                self.rho_min, self.rho_max
            )));
        }
        if self.n_u == 0 || self.n_y == 0 {
            return Err(LpvError::InvalidSpec(
                "need at least one input and one output".into(),
            ));
        }
        if !(self.rate_bound >= 0.0) || !self.rate_bound.is_finite() {
            return Err(LpvError::InvalidSpec(format!(
                "rate bound {} must be finite and nonnegative",
                self.rate_bound
            )));
        }
        Ok(())
    }

    /// Parses a spec from JSON; omitted fields keep the 80-state defaults
    /// and unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: BenchmarkSpec =
            serde_json::from_str(text).map_err(|e| LpvError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads and validates a spec file (see [`BenchmarkSpec::from_json`]).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LpvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            LpvError::InvalidSpec(msg) => {
                LpvError::InvalidSpec(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PvReal,
    PvComplexPair,
    ConstantReal,
    RepeatedReal,
    TransitionPair,
    Integrator,
    CrossingReal,
}

/// Documentation of one built-in λ(ρ) template.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyDoc {
    pub family: Family,
    pub template: &'static str,
    pub ranges: &'static str,
}

/// The parameterized function templates used per family, with their
/// randomization ranges.
pub fn family_catalog() -> Vec<FamilyDoc> {
    vec![
        FamilyDoc {
            family: Family::PvReal,
            template: "lambda(rho) = -a - b*rho",
            ranges: "a in [0.1, 5], b in [-0.5a, 3a] (keeps Re < 0 on the domain)",
        },
        FamilyDoc {
            family: Family::PvComplexPair,
            template: "lambda(rho) = -a - b*rho +/- i*(c + e*rho)",
            ranges: "a in [0.1, 5], b in [-0.5a, 3a], c in [0.2, 15], e in [-0.5c, min(5, c)] (frequency stays >= 0.1)",
        },
        FamilyDoc {
            family: Family::ConstantReal,
            template: "lambda(rho) = -a",
            ranges: "a in [0.1, 10]",
        },
        FamilyDoc {
            family: Family::RepeatedReal,
            template: "lambda(rho) = -a - b*rho, twice, with an intact 2-dim eigenspace",
            ranges: "a in [0.1, 5], b in [-0.5a, 3a]",
        },
        FamilyDoc {
            family: Family::TransitionPair,
            template: "lambda(rho) = -a - b*rho +/- sqrt(m*(rho - rho_t)) (complex for m*(rho - rho_t) < 0)",
            ranges: "a in [2.2, 6], b in [0, 2], |m| in [0.5, 4]; rho_t interior, kept off both grids",
        },
        FamilyDoc {
            family: Family::Integrator,
            template: "lambda(rho) = 0",
            ranges: "none",
        },
        FamilyDoc {
            family: Family::CrossingReal,
            template: "lambda(rho) = s*b*(rho - rho_c), sign s in {+1, -1}",
            ranges: "b in [0.5, 3]; rho_c interior, kept off both grids (crossing at rho_c)",
        },
    ]
}

/// One drawn family instance: the block it contributes to A₀(ρ) and the
/// eigenvalue functions it prescribes.
#[derive(Debug, Clone)]
struct FamilyInstance {
    family: Family,
    /// Family-specific parameters, see `family_catalog`.
    p: [f64; 4],
    /// Interior feature location (transition / crossing families).
    rho_t: f64,
}

impl FamilyInstance {
    fn block_dim(&self) -> usize {
        match self.family {
            Family::PvReal | Family::ConstantReal | Family::Integrator | Family::CrossingReal => 1,
            Family::PvComplexPair | Family::RepeatedReal | Family::TransitionPair => 2,
        }
    }

    /// Prescribed eigenvalues at `rho`, one entry per state.
    fn eigenvalues(&self, rho: f64) -> Vec<C64> {
        let [a, b, c, e] = self.p;
        match self.family {
            Family::PvReal | Family::RepeatedReal => {
                let l = C64::new(-a - b * rho, 0.0);
                if self.family == Family::RepeatedReal {
                    vec![l, l]
                } else {
                    vec![l]
                }
            }
            Family::ConstantReal => vec![C64::new(-a, 0.0)],
            Family::PvComplexPair => {
                let s = -a - b * rho;
                let w = c + e * rho;
                vec![C64::new(s, w), C64::new(s, -w)]
            }
            Family::TransitionPair => {
                let s = -a - b * rho;
                let g = c * (rho - self.rho_t);
                if g >= 0.0 {
                    let r = g.sqrt();
                    vec![C64::new(s + r, 0.0), C64::new(s - r, 0.0)]
                } else {
                    let w = (-g).sqrt();
                    vec![C64::new(s, w), C64::new(s, -w)]
                }
            }
            Family::Integrator => vec![C64::new(0.0, 0.0)],
            Family::CrossingReal => vec![C64::new(a * (rho - self.rho_t), 0.0)],
        }
    }

    /// Real modal block realizing the prescribed eigenvalues.
    fn block(&self, rho: f64) -> Mat {
        let [a, b, c, e] = self.p;
        match self.family {
            Family::PvReal => Mat::from_row_slice(1, 1, &[-a - b * rho]),
            Family::ConstantReal => Mat::from_row_slice(1, 1, &[-a]),
            Family::Integrator => Mat::zeros(1, 1),
            Family::CrossingReal => Mat::from_row_slice(1, 1, &[a * (rho - self.rho_t)]),
            Family::RepeatedReal => {
                let l = -a - b * rho;
                Mat::from_row_slice(2, 2, &[l, 0.0, 0.0, l])
            }
            Family::PvComplexPair => {
                let s = -a - b * rho;
                let w = c + e * rho;
                Mat::from_row_slice(2, 2, &[s, w, -w, s])
            }
            Family::TransitionPair => {
                let s = -a - b * rho;
                let g = c * (rho - self.rho_t);
                Mat::from_row_slice(2, 2, &[s, 1.0, g, s])
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Matrix sequence in exportable form (`data[k]` is row-major).
#[derive(Debug, Clone, Serialize)]
pub struct MatSamples {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl MatSamples {
    fn from_mats(mats: &[Mat]) -> Self {
        let (rows, cols) = (mats[0].nrows(), mats[0].ncols());
        MatSamples {
            rows,
            cols,
            data: mats
                .iter()
                .map(|m| {
                    let mut v = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            v.push(m[(r, c)]);
                        }
                    }
                    v
                })
                .collect(),
        }
    }
}

fn flat(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}

/// One prescribed eigenvalue trajectory with its post-deformation drift.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryTruth {
    pub family: Family,
    pub label: String,
    /// `(Re, Im)` samples on the coarse grid.
    pub lambda_n0: Vec<[f64; 2]>,
    /// `(Re, Im)` samples on the final grid.
    pub lambda_n: Vec<[f64; 2]>,
    /// Max matched eigenvalue displacement of the generated model from
    /// the prescription, over the final grid.
    pub drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub n0_grid: Vec<f64>,
    pub n_grid: Vec<f64>,
    pub degree: usize,
    /// One entry per state (conjugate pair members listed separately).
    pub trajectories: Vec<TrajectoryTruth>,
    pub max_drift: f64,
    /// Base of the similarity transform `T(ρ) = Q(I + ρΔ)`.
    pub q: Vec<f64>,
    /// Perturbation of the similarity transform (same shape as `q`).
    pub delta: Vec<f64>,
    /// Modal matrix A₀(ρ) sampled on the coarse grid.
    pub a0_n0: MatSamples,
    pub b0: MatSamples,
    pub c0: MatSamples,
    pub d0: MatSamples,
    /// How many T(ρ) draws were rejected before this instance passed.
    pub rejected_draws: usize,
}

impl GroundTruth {
    /// Writes the ground truth as JSON next to a model file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| LpvError::Internal(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|source| LpvError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Chebyshev polynomial T_k(s) by recurrence.
fn cheb_t(k: usize, s: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => s,
        _ => {
            let (mut t0, mut t1) = (1.0, s);
            for _ in 2..=k {
                let t2 = 2.0 * s * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            t1
        }
    }
}

fn cheb_design(samples: &[f64], lo: f64, hi: f64, degree: usize) -> Mat {
    Mat::from_fn(samples.len(), degree + 1, |r, c| {
        let s = 2.0 * (samples[r] - lo) / (hi - lo) - 1.0;
        cheb_t(c, s)
    })
}

/// Picks a point in the interior band `[0.25, 0.75]` of the domain at
/// least `2e-3·span` away from every point of both grids (best effort
/// within a bounded number of draws).
fn place_off_grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64, grids: [&[f64]; 2]) -> f64 {
    let span = hi - lo;
    let target = 2e-3 * span;
    let mut best = (f64::NEG_INFINITY, lo + 0.5 * span);
    for _ in 0..64 {
        let x = lo + span * (0.25 + 0.5 * rng.gen::<f64>());
        let d = grids
            .iter()
            .flat_map(|g| g.iter())
            .map(|&p| (p - x).abs())
            .fold(f64::INFINITY, f64::min);
        if d >= target {
            return x;
        }
        if d > best.0 {
            best = (d, x);
        }
    }
    best.1
}

fn draw_instances(
    spec: &BenchmarkSpec,
    rng: &mut ChaCha8Rng,
    n0_grid: &[f64],
    n_grid: &[f64],
) -> Vec<FamilyInstance> {
    let mut out = Vec::new();
    let f = &spec.families;
    let stable_ab = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        let a = 0.1 + 4.9 * rng.gen::<f64>();
        let b = a * (-0.5 + 3.5 * rng.gen::<f64>());
        (a, b)
    };
    for _ in 0..f.pv_real {
        let (a, b) = stable_ab(rng);
        out.push(FamilyInstance { family: Family::PvReal, p: [a, b, 0.0, 0.0], rho_t: 0.0 });
    }
    for _ in 0..f.pv_complex_pairs {
        let (a, b) = stable_ab(rng);
        let c = 0.2 + 14.8 * rng.gen::<f64>();
        let e = c * (-0.5 + rng.gen::<f64>() * (0.5 + (5.0f64 / c).min(1.0)));
        out.push(FamilyInstance { family: Family::PvComplexPair, p: [a, b, c, e], rho_t: 0.0 });
    }
    for _ in 0..f.constant_real {
        let a = 0.1 + 9.9 * rng.gen::<f64>();
        out.push(FamilyInstance { family: Family::ConstantReal, p: [a, 0.0, 0.0, 0.0], rho_t: 0.0 });
    }
    for _ in 0..f.repeated_groups {
        let (a, b) = stable_ab(rng);
        out.push(FamilyInstance { family: Family::RepeatedReal, p: [a, b, 0.0, 0.0], rho_t: 0.0 });
    }
    for _ in 0..f.transition_pairs {
        let a = 2.2 + 3.8 * rng.gen::<f64>();
        let b = 2.0 * rng.gen::<f64>();
        let m = (0.5 + 3.5 * rng.gen::<f64>()) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let rho_t = place_off_grid(rng, spec.rho_min, spec.rho_max, [n0_grid, n_grid]);
        out.push(FamilyInstance { family: Family::TransitionPair, p: [a, b, m, 0.0], rho_t });
    }
    for _ in 0..f.integrators {
        out.push(FamilyInstance { family: Family::Integrator, p: [0.0; 4], rho_t: 0.0 });
    }
    for _ in 0..f.crossing_real {
        let b = 0.5 + 2.5 * rng.gen::<f64>();
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let rho_c = place_off_grid(rng, spec.rho_min, spec.rho_max, [n0_grid, n_grid]);
        out.push(FamilyInstance {
            family: Family::CrossingReal,
            p: [sign * b, 0.0, 0.0, 0.0],
            rho_t: rho_c,
        });
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller on the deterministic stream.
    let u1: f64 = rng.gen::<f64>().max(1e-18);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws `T(ρ) = Q(I + ρ̃Δ)` with `ρ̃` the domain coordinate shifted to
/// start at 0: orthogonal base, ~25% of 2×2 tiles perturbed, `‖Δ‖₂` kept
/// at or below 0.25 so the transform stays well conditioned.
fn draw_transform(n: usize, rng: &mut ChaCha8Rng) -> (Mat, Mat) {
    let g = Mat::from_fn(n, n, |_, _| gaussian(rng));
    let q = g.qr().q();
    let mut delta = Mat::zeros(n, n);
    let tiles = n.div_ceil(2);
    for bi in 0..tiles {
        for bj in 0..tiles {
            if rng.gen::<f64>() < 0.25 {
                for r in 2 * bi..(2 * bi + 2).min(n) {
                    for c in 2 * bj..(2 * bj + 2).min(n) {
                        delta[(r, c)] = gaussian(rng);
                    }
                }
            }
        }
    }
    let norm = crate::numerics::spectral_norm(&delta);
    if norm > 0.0 {
        let target = 0.25 * (0.5 + 0.5 * rng.gen::<f64>());
        delta *= target / norm;
    }
    (q, delta)
}

struct Draft {
    points: Vec<GridPoint>,
    a0_n0: Vec<Mat>,
}

/// Builds the deformed model on the final grid for one T(ρ) draw.
fn build_draft(
    spec: &BenchmarkSpec,
    instances: &[FamilyInstance],
    b0: &Mat,
    c0: &Mat,
    d0: &Mat,
    q: &Mat,
    delta: &Mat,
    n0_grid: &[f64],
    n_grid: &[f64],
) -> Result<Draft> {
    let n = spec.n_x;
    let a0_at = |rho: f64| -> Mat {
        let mut a0 = Mat::zeros(n, n);
        let mut off = 0;
        for inst in instances {
            let blk = inst.block(rho);
            let w = blk.nrows();
            a0.view_mut((off, off), (w, w)).copy_from(&blk);
            off += w;
        }
        a0
    };
    let t_at = |rho: f64| -> Mat {
        let shifted = rho - spec.rho_min;
        q * (Mat::identity(n, n) + delta * shifted)
    };

    // Transformed snapshots on the coarse grid.
    let mut a0_n0 = Vec::with_capacity(n0_grid.len());
    let n_a = n * n;
    let n_b = n * spec.n_u;
    let n_c = spec.n_y * n;
    let mut samples = Mat::zeros(n0_grid.len(), n_a + n_b + n_c);
    for (k, &rho) in n0_grid.iter().enumerate() {
        let a0 = a0_at(rho);
        let t = t_at(rho);
        let ti = t.clone().try_inverse().ok_or_else(|| {
            LpvError::Internal("similarity transform is singular by construction".into())
        })?;
        let a = &t * &a0 * &ti;
        let b = &t * b0;
        let c = c0 * &ti;
        let mut col = 0;
        for r in 0..n {
            for cc in 0..n {
                samples[(k, col)] = a[(r, cc)];
                col += 1;
            }
        }
        for r in 0..n {
            for cc in 0..spec.n_u {
                samples[(k, col)] = b[(r, cc)];
                col += 1;
            }
        }
        for r in 0..spec.n_y {
            for cc in 0..n {
                samples[(k, col)] = c[(r, cc)];
                col += 1;
            }
        }
        a0_n0.push(a0);
    }

    // Entrywise Chebyshev least squares, shared factorization.
    let phi = cheb_design(n0_grid, spec.rho_min, spec.rho_max, spec.degree);
    let svd = phi.svd(true, true);
    let coeffs = svd
        .solve(&samples, 1e-14)
        .map_err(|e| LpvError::Internal(format!("polynomial fit failed: {e}")))?;
    let psi = cheb_design(n_grid, spec.rho_min, spec.rho_max, spec.degree);
    let fitted = psi * coeffs;

    let mut points = Vec::with_capacity(n_grid.len());
    for (k, &rho) in n_grid.iter().enumerate() {
        let mut a = Mat::zeros(n, n);
        let mut b = Mat::zeros(n, spec.n_u);
        let mut c = Mat::zeros(spec.n_y, n);
        let mut col = 0;
        for r in 0..n {
            for cc in 0..n {
                a[(r, cc)] = fitted[(k, col)];
                col += 1;
            }
        }
        for r in 0..n {
            for cc in 0..spec.n_u {
                b[(r, cc)] = fitted[(k, col)];
                col += 1;
            }
        }
        for r in 0..spec.n_y {
            for cc in 0..n {
                c[(r, cc)] = fitted[(k, col)];
                col += 1;
            }
        }
        points.push(GridPoint { rho, a, b, c, d: d0.clone() });
    }
    Ok(Draft { points, a0_n0 })
}

/// Truth eigenvalues per state at one grid point.
fn truth_at(instances: &[FamilyInstance], rho: f64) -> Vec<C64> {
    let mut out = Vec::new();
    for inst in instances {
        out.extend(inst.eigenvalues(rho));
    }
    out
}

/// Matches the computed eigenvalues of every final-grid A_k against the
/// prescription and checks the family labels; returns per-trajectory
/// drift or a rejection reason.
fn check_draft(
    instances: &[FamilyInstance],
    points: &[GridPoint],
    n_grid: &[f64],
) -> std::result::Result<Vec<f64>, String> {
    let n = points[0].a.nrows();
    let per_point: std::result::Result<Vec<Vec<(usize, C64)>>, String> = points
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let dec = eig_decompose(&p.a, 1e10)
                .map_err(|e| format!("grid point {k}: {e}"))?;
            let truth = truth_at(instances, n_grid[k]);
            let mut cost = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    cost[(i, j)] = (truth[i] - dec.values[j]).norm();
                }
            }
            let assign = crate::assignment::min_cost_assignment(&cost)
                .map_err(|e| format!("grid point {k}: {e}"))?;
            Ok((0..n)
                .map(|i| (i, dec.values[assign.assignment[i]]))
                .collect())
        })
        .collect();
    let per_point = per_point?;

    let mut drift = vec![0.0f64; n];
    for (k, matched) in per_point.iter().enumerate() {
        let truth = truth_at(instances, n_grid[k]);
        // Trajectory index per state row.
        let mut idx = 0;
        for inst in instances {
            for _ in 0..inst.block_dim() {
                let (i, actual) = matched[idx];
                debug_assert_eq!(i, idx);
                let intended = truth[idx];
                let d = (actual - intended).norm();
                drift[idx] = drift[idx].max(d);
                // Family label checks.
                match inst.family {
                    Family::Integrator => {
                        if actual.norm() > 1e-6 {
                            return Err(format!(
                                "integrator drifted to {actual} at grid point {k}"
                            ));
                        }
                    }
                    _ => {
                        if intended.re < -1e-9 && actual.re >= 0.0 {
                            return Err(format!(
                                "stable eigenvalue {intended} became {actual} at grid point {k}"
                            ));
                        }
                        if intended.re > 1e-9 && actual.re <= 0.0 {
                            return Err(format!(
                                "unstable eigenvalue {intended} became {actual} at grid point {k}"
                            ));
                        }
                    }
                }
                if d > 1e-6 {
                    return Err(format!(
                        "eigenvalue drift {d:.3e} at grid point {k} exceeds 1e-6"
                    ));
                }
                idx += 1;
            }
        }
    }
    Ok(drift)
}

/// Generates a benchmark model with ground truth. Deterministic in the
/// seed; the similarity transform is redrawn (bounded retries) until the
/// instance is diagonalizable on the whole grid with unchanged family
/// labels.
pub fn generate(spec: &BenchmarkSpec) -> Result<(GridLpvModel, GroundTruth)> {
    spec.validate()?;
    let n0_grid = linspace(spec.rho_min, spec.rho_max, spec.n0);
    let n_grid = linspace(spec.rho_min, spec.rho_max, spec.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let instances = draw_instances(spec, &mut rng, &n0_grid, &n_grid);
    let b0 = Mat::from_fn(spec.n_x, spec.n_u, |_, _| gaussian(&mut rng));
    let c0 = Mat::from_fn(spec.n_y, spec.n_x, |_, _| gaussian(&mut rng));
    let d0 = Mat::from_fn(spec.n_y, spec.n_u, |_, _| 0.1 * gaussian(&mut rng));

    let mut last_reason = String::new();
    for attempt in 0..spec.max_retries {
        let (q, delta) = if spec.identity_transform {
            (Mat::identity(spec.n_x, spec.n_x), Mat::zeros(spec.n_x, spec.n_x))
        } else {
            draw_transform(spec.n_x, &mut rng)
        };
        let draft = build_draft(
            spec, &instances, &b0, &c0, &d0, &q, &delta, &n0_grid, &n_grid,
        )?;
        match check_draft(&instances, &draft.points, &n_grid) {
            Ok(drift) => {
                let model = GridLpvModel::from_points(draft.points, spec.rate_bound)?;
                let mut trajectories = Vec::with_capacity(spec.n_x);
                let mut idx = 0;
                let mut counters: std::collections::BTreeMap<&'static str, usize> =
                    Default::default();
                for inst in &instances {
                    let fname = match inst.family {
                        Family::PvReal => "pv_real",
                        Family::PvComplexPair => "pv_complex",
                        Family::ConstantReal => "constant_real",
                        Family::RepeatedReal => "repeated_real",
                        Family::TransitionPair => "transition",
                        Family::Integrator => "integrator",
                        Family::CrossingReal => "crossing_real",
                    };
                    let inst_id = *counters
                        .entry(fname)
                        .and_modify(|v| *v += 1)
                        .or_insert(0);
                    for member in 0..inst.block_dim() {
                        let lam0: Vec<[f64; 2]> = n0_grid
                            .iter()
                            .map(|&r| {
                                let l = inst.eigenvalues(r)[member];
                                [l.re, l.im]
                            })
                            .collect();
                        let lam: Vec<[f64; 2]> = n_grid
                            .iter()
                            .map(|&r| {
                                let l = inst.eigenvalues(r)[member];
                                [l.re, l.im]
                            })
                            .collect();
                        trajectories.push(TrajectoryTruth {
                            family: inst.family,
                            label: format!("{fname}[{inst_id}].{member}"),
                            lambda_n0: lam0,
                            lambda_n: lam,
                            drift: drift[idx],
                        });
                        idx += 1;
                    }
                }
                let max_drift = drift.iter().copied().fold(0.0, f64::max);
                let truth = GroundTruth {
                    n0_grid,
                    n_grid,
                    degree: spec.degree,
                    trajectories,
                    max_drift,
                    q: flat(&q),
                    delta: flat(&delta),
                    a0_n0: MatSamples::from_mats(&draft.a0_n0),
                    b0: MatSamples::from_mats(std::slice::from_ref(&b0)),
                    c0: MatSamples::from_mats(std::slice::from_ref(&c0)),
                    d0: MatSamples::from_mats(std::slice::from_ref(&d0)),
                    rejected_draws: attempt,
                };
                return Ok((model, truth));
            }
            Err(reason) => {
                last_reason = reason;
                if spec.identity_transform {
                    // Redrawing cannot change an identity transform.
                    break;
                }
            }
        }
    }
    Err(LpvError::GenerationRetries {
        retries: spec.max_retries,
        detail: format!("{last_reason}; try a different seed"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_spec(seed: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            n_x: 12,
            n_u: 2,
            n_y: 2,
            n0: 30,
            n: 40,
            degree: 8,
            families: FamilyCounts {
                pv_real: 3,
                pv_complex_pairs: 2,
                constant_real: 1,
                repeated_groups: 1,
                transition_pairs: 0,
                integrators: 1,
                crossing_real: 1,
            },
            seed,
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn spec_validation() {
        let mut bad = small_spec(0);
        bad.n_x = 13;
        assert!(matches!(bad.validate(), Err(LpvError::InvalidSpec(_))));
        let mut bad = small_spec(0);
        bad.degree = 30;
        assert!(matches!(bad.validate(), Err(LpvError::InvalidSpec(_))));
        assert!(small_spec(0).validate().is_ok());
        assert_eq!(BenchmarkSpec::default().families.n_states(), 80);
        assert!(BenchmarkSpec::default().validate().is_ok());
    }

    #[test]
    fn spec_json_round_trip_and_rejections() {
        let spec = BenchmarkSpec::from_json("{}").unwrap();
        assert_eq!(spec.n_x, 80);
        assert_eq!(spec.families.n_states(), 80);

        let spec = BenchmarkSpec::from_json(
            r#"{
                "n_x": 9, "n0": 16, "n": 24, "degree": 8, "seed": 5,
                "families": {
                    "pv_real": 2, "pv_complex_pairs": 2, "constant_real": 1,
                    "repeated_groups": 0, "transition_pairs": 0,
                    "integrators": 1, "crossing_real": 1
                }
            }"#,
        )
        .unwrap();
        assert_eq!(spec.n_x, 9);
        assert_eq!(spec.seed, 5);
        assert_eq!(spec.n_u, 2, "omitted fields keep defaults");

        // Unknown keys rejected at both levels; family sums re-checked.
        assert!(matches!(
            BenchmarkSpec::from_json(r#"{"n_states": 9}"#),
            Err(LpvError::InvalidSpec(_))
        ));
        assert!(BenchmarkSpec::from_json(
            r#"{"families": {"pv_real": 1, "pv_complex_pairs": 0, "constant_real": 0,
                "repeated_groups": 0, "transition_pairs": 0, "integrators": 0,
                "crossing_real": 0, "extra": 1}}"#
        )
        .is_err());
        let err = BenchmarkSpec::from_json(r#"{"n_x": 3}"#).unwrap_err();
        assert!(err.to_string().contains("family block dimensions sum to 80"));

        // Partial families blocks are rejected (all seven counts required).
        assert!(BenchmarkSpec::from_json(r#"{"n_x": 1, "families": {"pv_real": 1}}"#).is_err());

        let text = serde_json::to_string(&small_spec(3)).unwrap();
        let back = BenchmarkSpec::from_json(&text).unwrap();
        assert_eq!(back.n_x, 12);
        assert_eq!(back.families, small_spec(3).families);
    }

    #[test]
    fn catalog_covers_every_family() {
        let docs = family_catalog();
        assert_eq!(docs.len(), 7);
        for f in [
            Family::PvReal,
            Family::PvComplexPair,
            Family::ConstantReal,
            Family::RepeatedReal,
            Family::TransitionPair,
            Family::Integrator,
            Family::CrossingReal,
        ] {
            assert!(docs.iter().any(|d| d.family == f));
        }
    }

    #[test]
    fn lti_when_constant_families_and_identity_transform() {
        let spec = BenchmarkSpec {
            n_x: 3,
            n_u: 1,
            n_y: 1,
            n0: 20,
            n: 25,
            degree: 5,
            families: FamilyCounts {
                pv_real: 0,
                pv_complex_pairs: 0,
                constant_real: 3,
                repeated_groups: 0,
                transition_pairs: 0,
                integrators: 0,
                crossing_real: 0,
            },
            seed: 1,
            identity_transform: true,
            ..BenchmarkSpec::default()
        };
        let (model, truth) = generate(&spec).unwrap();
        // Constant families + identity transform: one matrix repeated
        // (up to roundoff of the trivially exact polynomial fit).
        for p in &model.points {
            assert!((&p.a - &model.points[0].a).norm() < 1e-12);
            assert!((&p.b - &model.points[0].b).norm() < 1e-12);
        }
        // Diagonal A with exactly the prescribed eigenvalues.
        for tr in &truth.trajectories {
            let intended = tr.lambda_n[0][0];
            assert!(
                (0..3).any(|i| (model.points[0].a[(i, i)] - intended).abs() < 1e-9),
                "prescribed {intended} missing from the diagonal"
            );
        }
        assert!(truth.max_drift < 1e-9);
    }

    #[test]
    fn determinism_same_seed_bit_identical() {
        let spec = small_spec(42);
        let (m1, t1) = generate(&spec).unwrap();
        let (m2, t2) = generate(&spec).unwrap();
        assert_eq!(m1.points.len(), m2.points.len());
        for (p, q) in m1.points.iter().zip(m2.points.iter()) {
            assert_eq!(p.a, q.a);
            assert_eq!(p.b, q.b);
            assert_eq!(p.c, q.c);
            assert_eq!(p.d, q.d);
        }
        assert_eq!(
            serde_json::to_string(&t1).unwrap(),
            serde_json::to_string(&t2).unwrap()
        );
        let (m3, _) = generate(&small_spec(43)).unwrap();
        assert_ne!(m1.points[0].a, m3.points[0].a);
    }

    #[test]
    fn families_present_in_generated_model() {
        let spec = BenchmarkSpec {
            n_x: 16,
            n0: 40,
            n: 50,
            degree: 10,
            families: FamilyCounts {
                pv_real: 4,
                pv_complex_pairs: 2,
                constant_real: 1,
                repeated_groups: 1,
                transition_pairs: 1,
                integrators: 1,
                crossing_real: 2,
            },
            seed: 7,
            ..BenchmarkSpec::default()
        };
        let (model, truth) = generate(&spec).unwrap();
        assert_eq!(model.n_x, 16);
        assert_eq!(truth.trajectories.len(), 16);
        assert!(truth.max_drift <= 1e-6);

        // Pole map at grid points matches ground truth within 1e-6.
        for k in [0, 25, 49] {
            let eigs = model.points[k].a.complex_eigenvalues();
            for tr in &truth.trajectories {
                let intended = C64::new(tr.lambda_n[k][0], tr.lambda_n[k][1]);
                let best = eigs
                    .iter()
                    .map(|l| (l - intended).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    best <= 1e-6,
                    "trajectory {} missing at grid point {k}: err {best:.2e}",
                    tr.label
                );
            }
        }

        // Integrator rows stay at zero; crossing rows change sign.
        for tr in &truth.trajectories {
            match tr.family {
                Family::Integrator => {
                    assert!(tr.lambda_n.iter().all(|l| l[0] == 0.0 && l[1] == 0.0));
                }
                Family::CrossingReal => {
                    let first = tr.lambda_n.first().unwrap()[0];
                    let last = tr.lambda_n.last().unwrap()[0];
                    assert!(
                        first * last < 0.0,
                        "crossing trajectory {} does not change sign",
                        tr.label
                    );
                    // Crossing point off the grid by construction.
                    for l in &tr.lambda_n {
                        assert!(l[0].abs() > 1e-9);
                    }
                }
                Family::TransitionPair => {
                    let has_real = tr.lambda_n.iter().any(|l| l[1] == 0.0);
                    let has_complex = tr.lambda_n.iter().any(|l| l[1] != 0.0);
                    assert!(
                        has_real && has_complex,
                        "transition trajectory {} never switches character",
                        tr.label
                    );
                }
                _ => {
                    // Stable families stay strictly stable.
                    assert!(tr.lambda_n.iter().all(|l| l[0] < 0.0));
                }
            }
        }

        // Repeated family: two identical rows.
        let repeated: Vec<_> = truth
            .trajectories
            .iter()
            .filter(|t| t.family == Family::RepeatedReal)
            .collect();
        assert_eq!(repeated.len(), 2);
        assert_eq!(repeated[0].lambda_n, repeated[1].lambda_n);
    }

    #[test]
    fn complex_frequencies_stay_above_floor() {
        let spec = small_spec(3);
        let (_, truth) = generate(&spec).unwrap();
        for tr in &truth.trajectories {
            if tr.family == Family::PvComplexPair {
                for l in &tr.lambda_n {
                    assert!(l[1].abs() >= 0.1 || l[1] == 0.0);
                }
            }
        }
    }

    #[test]
    fn ground_truth_roundtrip_to_json() {
        let (_, truth) = generate(&small_spec(5)).unwrap();
        let dir = std::env::temp_dir().join("lpvred_benchgen_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truth.json");
        truth.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["trajectories"].as_array().unwrap().len(), 12);
        assert_relative_eq!(
            v["max_drift"].as_f64().unwrap(),
            truth.max_drift,
            epsilon = 0.0
        );
        std::fs::remove_file(&path).ok();
    }
}
