//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LpvError>;

/// Errors reported by the reduction pipeline and its kernels.
///
/// Diagnostics carry enough context (grid-point index, matrix name,
/// offending value) to locate the problem in the input data without a
/// debugger.
#[derive(Debug, Error)]
pub enum LpvError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("dimension mismatch at point {point}: matrix {matrix} is {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    Dimension {
        point: usize,
        matrix: &'static str,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },

    #[error("non-monotone grid: rho_grid[{index}] = {value} does not strictly increase")]
    NonMonotoneGrid { index: usize, value: f64 },

    #[error("non-finite entry in matrix {matrix} at point {point}")]
    NonFinite { point: usize, matrix: &'static str },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("scheduling value {rho} outside grid range [{lo}, {hi}]")]
    RhoOutOfRange { rho: f64, lo: f64, hi: f64 },

    #[error("near-defective matrix{}: eigenvector condition number {cond:.3e} exceeds {max:.3e} near eigenvalue cluster around {near}", grid_context(.point))]
    NearDefective {
        point: Option<usize>,
        cond: f64,
        max: f64,
        near: String,
    },

    #[error("matrix is not Hurwitz: eigenvalue {eigenvalue} has nonnegative real part; separate unstable and integrator modes before computing Gramians")]
    NotHurwitz { eigenvalue: String },

    #[error("singular transform{}: condition number {cond:.3e} exceeds {max:.3e}", grid_context(.point))]
    SingularTransform {
        point: Option<usize>,
        cond: f64,
        max: f64,
    },

    #[error("imaginary-axis eigenvalue: |exp(lambda*T_s)| = {magnitude} within 1e-12 of the unit circle (assumption on axis-free grid spectra violated)")]
    ImaginaryAxis { magnitude: f64 },

    #[error("aliasing: |Im(lambda)|*T_s = {product} >= pi; choose a smaller sampling time than {ts}")]
    Aliasing { product: f64, ts: f64 },

    #[error("argument on or outside the unit disk: |z| = {magnitude}")]
    OutsideDisk { magnitude: f64 },

    #[error("eigenspace discontinuity at transition {from} -> {to}: Procrustes factor condition number {cond:.3e} exceeds 1e8")]
    EigenspaceDiscontinuity { from: usize, to: usize, cond: f64 },

    #[error("repair refused for group {group}: induced relative perturbation {delta:.3e} exceeds budget {budget:.3e}")]
    RepairBudget {
        group: usize,
        delta: f64,
        budget: f64,
    },

    #[error("resolvent nearly singular at omega = {omega}: jw is within 1e-12 of an eigenvalue")]
    SingularResolvent { omega: f64 },

    #[error("Cholesky factorization failed at grid point {point}: matrix not positive definite")]
    NotPositiveDefinite { point: usize },

    #[error("singular value spread too large at grid point {point}: sigma_min/sigma_max = {ratio:.3e} < 1e-12; choose a smaller kept order")]
    SingularValueUnderflow { point: usize, ratio: f64 },

    #[error("simulation diverged at t = {time}: state norm exceeded 1e12")]
    Divergence { time: f64 },

    #[error("cophenetic coefficient undefined for {leaves} leaves (need at least 3)")]
    TooFewLeaves { leaves: usize },

    #[error("benchmark generation failed after {retries} retries: {detail}; try a different seed")]
    GenerationRetries { retries: usize, detail: String },

    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LpvError>,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

fn grid_context(point: &Option<usize>) -> String {
    match point {
        Some(k) => format!(" at grid point {k}"),
        None => String::new(),
    }
}

impl LpvError {
    /// Wraps an error with the name of the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        LpvError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
