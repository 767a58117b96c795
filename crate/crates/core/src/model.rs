//! Grid-based LPV model types and the on-disk JSON exchange format.
//!
//! A model stores state-space matrices sampled on a strictly increasing
//! scheduling grid together with a bound on the parameter rate. Between
//! grid points the model is defined by entrywise linear interpolation.
//!
//! The JSON schema uses row-major nested arrays for matrices:
//!
//! ```json
//! { "n_x": 2, "n_u": 1, "n_y": 1,
//!   "rho_grid": [0.0, 1.0], "rate_bound": 0.1,
//!   "points": [ { "rho": 0.0, "A": [[...]], "B": [[...]], "C": [[...]], "D": [[...]] }, ... ] }
//! ```
//!
//! Reduced models additionally carry per-vertex state matrices
//! (`"vertex_points"`, one entry per grid point and rate vertex ±δ) and a
//! `"meta"` block with the preserved unstable-state and integrator counts.
//! Numeric fields survive a save/load round trip bit-exactly (shortest
//! round-trip float formatting on write, exact parse on read).

use crate::error::{LpvError, Result};
use crate::Mat;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// State-space matrices sampled at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub rho: f64,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

/// Frozen-parameter LTI snapshot of an LPV model.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSnapshot {
    pub rho: f64,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

/// Grid-based LPV model: matrices sampled on a scheduling grid with a
/// rate bound, linearly interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLpvModel {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Strictly increasing scheduling values, length ≥ 2.
    pub rho_grid: Vec<f64>,
    /// Bound δ ≥ 0 on |dρ/dt|.
    pub rate_bound: f64,
    pub points: Vec<GridPoint>,
}

/// Bookkeeping attached to a reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedMeta {
    /// Number of preserved (unreduced) unstable or mixed-stability states.
    pub unstable_states: usize,
    /// Number of preserved integrator states.
    pub integrators: usize,
}

/// Reduced-order LPV model whose state matrix depends on both the
/// parameter and its rate: per grid point `k` the two vertex matrices
/// `A(ρ_k, −δ)` and `A(ρ_k, +δ)` are stored, and `A` is linear in the
/// rate between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLpvModel {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub rho_grid: Vec<f64>,
    pub rate_bound: f64,
    /// Rate-average data: `points[k].a` is `A(ρ_k, 0)`; `b`, `c`, `d` are
    /// rate-independent.
    pub points: Vec<GridPoint>,
    /// Per grid point: `[A(ρ_k, −δ), A(ρ_k, +δ)]`.
    pub vertex_a: Vec<[Mat; 2]>,
    pub meta: ReducedMeta,
}

/// Either model kind, as stored on disk.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Full(GridLpvModel),
    Reduced(ReducedLpvModel),
}

// ---------------------------------------------------------------------------
// Construction and validation
// ---------------------------------------------------------------------------

fn check_grid(rho_grid: &[f64]) -> Result<()> {
    if rho_grid.len() < 2 {
        return Err(LpvError::InvalidModel(format!(
            "rho_grid has {} points, need at least 2",
            rho_grid.len()
        )));
    }
    for (i, &r) in rho_grid.iter().enumerate() {
        if !r.is_finite() {
            return Err(LpvError::InvalidModel(format!(
                "rho_grid[{i}] is not finite"
            )));
        }
        if i > 0 && r <= rho_grid[i - 1] {
            return Err(LpvError::NonMonotoneGrid { index: i, value: r });
        }
    }
    Ok(())
}

fn check_matrix(
    m: &Mat,
    point: usize,
    name: &'static str,
    want_rows: usize,
    want_cols: usize,
) -> Result<()> {
    if m.nrows() != want_rows || m.ncols() != want_cols {
        return Err(LpvError::Dimension {
            point,
            matrix: name,
            got_rows: m.nrows(),
            got_cols: m.ncols(),
            want_rows,
            want_cols,
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LpvError::NonFinite {
            point,
            matrix: name,
        });
    }
    Ok(())
}

fn check_points(
    points: &[GridPoint],
    rho_grid: &[f64],
    n_x: usize,
    n_u: usize,
    n_y: usize,
) -> Result<()> {
    if points.len() != rho_grid.len() {
        return Err(LpvError::InvalidModel(format!(
            "points has {} entries but rho_grid has {}",
            points.len(),
            rho_grid.len()
        )));
    }
    for (k, p) in points.iter().enumerate() {
        if p.rho != rho_grid[k] {
            return Err(LpvError::InvalidModel(format!(
                "points[{k}].rho = {} does not match rho_grid[{k}] = {}",
                p.rho, rho_grid[k]
            )));
        }
        check_matrix(&p.a, k, "A", n_x, n_x)?;
        check_matrix(&p.b, k, "B", n_x, n_u)?;
        check_matrix(&p.c, k, "C", n_y, n_x)?;
        check_matrix(&p.d, k, "D", n_y, n_u)?;
    }
    Ok(())
}

impl GridLpvModel {
    /// Builds a model and checks all structural invariants.
    pub fn new(
        rho_grid: Vec<f64>,
        rate_bound: f64,
        points: Vec<GridPoint>,
        n_u: usize,
        n_y: usize,
    ) -> Result<Self> {
        let n_x = points.first().map(|p| p.a.nrows()).unwrap_or(0);
        let model = GridLpvModel {
            n_x,
            n_u,
            n_y,
            rho_grid,
            rate_bound,
            points,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds a model from grid points alone, reading the scheduling grid
    /// and the I/O dimensions off the point data.
    pub fn from_points(points: Vec<GridPoint>, rate_bound: f64) -> Result<Self> {
        let rho_grid: Vec<f64> = points.iter().map(|p| p.rho).collect();
        let n_u = points.first().map(|p| p.b.ncols()).unwrap_or(0);
        let n_y = points.first().map(|p| p.c.nrows()).unwrap_or(0);
        Self::new(rho_grid, rate_bound, points, n_u, n_y)
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        check_grid(&self.rho_grid)?;
        if !(self.rate_bound >= 0.0) || !self.rate_bound.is_finite() {
            return Err(LpvError::InvalidModel(format!(
                "rate_bound = {} must be finite and nonnegative",
                self.rate_bound
            )));
        }
        if self.n_x == 0 {
            return Err(LpvError::InvalidModel("n_x must be positive".into()));
        }
        check_points(&self.points, &self.rho_grid, self.n_x, self.n_u, self.n_y)
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.rho_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_grid.is_empty()
    }

    /// Entrywise linear interpolation between the bracketing grid points;
    /// exact at grid points. Errors if `rho` lies outside the grid range.
    pub fn interpolate(&self, rho: f64) -> Result<LtiSnapshot> {
        let (k, t) = bracket(&self.rho_grid, rho)?;
        let p0 = &self.points[k];
        let p1 = &self.points[k + 1];
        Ok(LtiSnapshot {
            rho,
            a: lerp(&p0.a, &p1.a, t),
            b: lerp(&p0.b, &p1.b, t),
            c: lerp(&p0.c, &p1.c, t),
            d: lerp(&p0.d, &p1.d, t),
        })
    }

    /// Loads and validates a model from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: FullDoc = read_doc(path.as_ref())?;
        doc.into_model()
    }

    /// Serializes the model to the canonical JSON text that `save` writes.
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        doc_to_json(&FullDoc::from_model(self))
    }

    /// Writes the model as JSON. `load` reproduces every numeric field
    /// bit-identically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json()?)
    }
}

impl ReducedLpvModel {
    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        check_grid(&self.rho_grid)?;
        if !(self.rate_bound >= 0.0) || !self.rate_bound.is_finite() {
            return Err(LpvError::InvalidModel(format!(
                "rate_bound = {} must be finite and nonnegative",
                self.rate_bound
            )));
        }
        if self.n_x == 0 {
            return Err(LpvError::InvalidModel("n_x must be positive".into()));
        }
        check_points(&self.points, &self.rho_grid, self.n_x, self.n_u, self.n_y)?;
        if self.vertex_a.len() != self.rho_grid.len() {
            return Err(LpvError::InvalidModel(format!(
                "expected {} vertex pairs, found {}",
                self.rho_grid.len(),
                self.vertex_a.len()
            )));
        }
        for (k, pair) in self.vertex_a.iter().enumerate() {
            for a in pair {
                check_matrix(a, k, "vertex A", self.n_x, self.n_x)?;
            }
        }
        if self.meta.unstable_states + self.meta.integrators > self.n_x {
            return Err(LpvError::InvalidModel(
                "meta state counts exceed n_x".into(),
            ));
        }
        Ok(())
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.rho_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_grid.is_empty()
    }

    /// Rate-coupling base at grid point `k`: `(A(+δ) − A(−δ)) / (2δ)`, so
    /// that `A(ρ_k, ν) = points[k].a + base·ν`. Zero when δ = 0.
    pub fn rate_base(&self, k: usize) -> Mat {
        let [lo, hi] = &self.vertex_a[k];
        if self.rate_bound == 0.0 {
            Mat::zeros(self.n_x, self.n_x)
        } else {
            (hi - lo) / (2.0 * self.rate_bound)
        }
    }

    /// State matrix at `(ρ, ρ̇)`, linear in both arguments.
    pub fn a_at(&self, rho: f64, rhodot: f64) -> Result<Mat> {
        let (k, t) = bracket(&self.rho_grid, rho)?;
        let avg = lerp(&self.points[k].a, &self.points[k + 1].a, t);
        let base = lerp(&self.rate_base(k), &self.rate_base(k + 1), t);
        Ok(avg + base * rhodot)
    }

    /// Frozen snapshot at `ρ` with ρ̇ = 0 (the average of the two rate
    /// vertices, exact under the linear-in-rate structure).
    pub fn interpolate(&self, rho: f64) -> Result<LtiSnapshot> {
        let (k, t) = bracket(&self.rho_grid, rho)?;
        let p0 = &self.points[k];
        let p1 = &self.points[k + 1];
        Ok(LtiSnapshot {
            rho,
            a: lerp(&p0.a, &p1.a, t),
            b: lerp(&p0.b, &p1.b, t),
            c: lerp(&p0.c, &p1.c, t),
            d: lerp(&p0.d, &p1.d, t),
        })
    }

    /// Loads and validates a reduced model from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: ReducedDoc = read_doc(path.as_ref())?;
        doc.into_model()
    }

    /// Serializes the reduced model to the canonical JSON text that `save`
    /// writes (base schema plus `vertex_points` and `meta`).
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        doc_to_json(&ReducedDoc::from_model(self))
    }

    /// Writes the reduced model as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json()?)
    }
}

impl AnyModel {
    /// Loads either model kind, telling them apart by the presence of
    /// `vertex_points`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LpvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let probe: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| LpvError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        if probe.get("vertex_points").is_some() {
            let doc: ReducedDoc = parse_doc(&text, path)?;
            Ok(AnyModel::Reduced(doc.into_model()?))
        } else {
            let doc: FullDoc = parse_doc(&text, path)?;
            Ok(AnyModel::Full(doc.into_model()?))
        }
    }

    pub fn n_x(&self) -> usize {
        match self {
            AnyModel::Full(m) => m.n_x,
            AnyModel::Reduced(m) => m.n_x,
        }
    }

    /// Frozen LTI snapshot at `ρ` (reduced models use ρ̇ = 0).
    pub fn interpolate(&self, rho: f64) -> Result<LtiSnapshot> {
        match self {
            AnyModel::Full(m) => m.interpolate(rho),
            AnyModel::Reduced(m) => m.interpolate(rho),
        }
    }
}

/// Loads and validates a full grid model (see [`GridLpvModel::load`]).
pub fn load_model(path: impl AsRef<Path>) -> Result<GridLpvModel> {
    GridLpvModel::load(path)
}

/// Writes a full grid model (see [`GridLpvModel::save`]).
pub fn save_model(model: &GridLpvModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

// ---------------------------------------------------------------------------
// Interpolation helpers
// ---------------------------------------------------------------------------

/// Finds the interval index `k` and local coordinate `t ∈ [0, 1]` with
/// `rho = (1−t)·grid[k] + t·grid[k+1]`.
pub(crate) fn bracket(grid: &[f64], rho: f64) -> Result<(usize, f64)> {
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    if !(rho >= lo && rho <= hi) {
        return Err(LpvError::RhoOutOfRange { rho, lo, hi });
    }
    // partition_point returns the first index with grid[i] > rho, so k+1
    // is the first knot strictly above rho (or the last knot for rho = hi).
    let upper = grid.partition_point(|&g| g <= rho).min(grid.len() - 1);
    let k = upper.saturating_sub(1).min(grid.len() - 2);
    let t = (rho - grid[k]) / (grid[k + 1] - grid[k]);
    Ok((k, t))
}

pub(crate) fn lerp(a: &Mat, b: &Mat, t: f64) -> Mat {
    if t == 0.0 {
        a.clone()
    } else if t == 1.0 {
        b.clone()
    } else {
        a * (1.0 - t) + b * t
    }
}

// ---------------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------------

type Rows = Vec<Vec<f64>>;

pub(crate) fn mat_to_rows(m: &Mat) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn rows_to_mat(
    rows: &Rows,
    point: usize,
    name: &'static str,
    want_rows: usize,
    want_cols: usize,
) -> Result<Mat> {
    let got_rows = rows.len();
    let got_cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if got_rows != want_rows
        || got_cols != want_cols
        || rows.iter().any(|r| r.len() != got_cols)
    {
        return Err(LpvError::Dimension {
            point,
            matrix: name,
            got_rows,
            got_cols,
            want_rows,
            want_cols,
        });
    }
    Ok(Mat::from_fn(want_rows, want_cols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct PointDoc {
    rho: f64,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D")]
    d: Rows,
}

#[derive(Serialize, Deserialize)]
struct FullDoc {
    n_x: usize,
    n_u: usize,
    n_y: usize,
    rho_grid: Vec<f64>,
    rate_bound: f64,
    points: Vec<PointDoc>,
}

#[derive(Serialize, Deserialize)]
struct VertexDoc {
    rho: f64,
    rhodot: f64,
    #[serde(rename = "A")]
    a: Rows,
}

#[derive(Serialize, Deserialize)]
struct ReducedDoc {
    n_x: usize,
    n_u: usize,
    n_y: usize,
    rho_grid: Vec<f64>,
    rate_bound: f64,
    points: Vec<PointDoc>,
    vertex_points: Vec<VertexDoc>,
    meta: ReducedMeta,
}

fn point_docs(points: &[GridPoint]) -> Vec<PointDoc> {
    points
        .iter()
        .map(|p| PointDoc {
            rho: p.rho,
            a: mat_to_rows(&p.a),
            b: mat_to_rows(&p.b),
            c: mat_to_rows(&p.c),
            d: mat_to_rows(&p.d),
        })
        .collect()
}

fn docs_to_points(docs: &[PointDoc], n_x: usize, n_u: usize, n_y: usize) -> Result<Vec<GridPoint>> {
    docs.iter()
        .enumerate()
        .map(|(k, p)| {
            Ok(GridPoint {
                rho: p.rho,
                a: rows_to_mat(&p.a, k, "A", n_x, n_x)?,
                b: rows_to_mat(&p.b, k, "B", n_x, n_u)?,
                c: rows_to_mat(&p.c, k, "C", n_y, n_x)?,
                d: rows_to_mat(&p.d, k, "D", n_y, n_u)?,
            })
        })
        .collect()
}

impl FullDoc {
    fn from_model(m: &GridLpvModel) -> Self {
        FullDoc {
            n_x: m.n_x,
            n_u: m.n_u,
            n_y: m.n_y,
            rho_grid: m.rho_grid.clone(),
            rate_bound: m.rate_bound,
            points: point_docs(&m.points),
        }
    }

    fn into_model(self) -> Result<GridLpvModel> {
        let points = docs_to_points(&self.points, self.n_x, self.n_u, self.n_y)?;
        let model = GridLpvModel {
            n_x: self.n_x,
            n_u: self.n_u,
            n_y: self.n_y,
            rho_grid: self.rho_grid,
            rate_bound: self.rate_bound,
            points,
        };
        model.validate()?;
        Ok(model)
    }
}

impl ReducedDoc {
    fn from_model(m: &ReducedLpvModel) -> Self {
        let mut vertex_points = Vec::with_capacity(2 * m.vertex_a.len());
        for (k, [lo, hi]) in m.vertex_a.iter().enumerate() {
            vertex_points.push(VertexDoc {
                rho: m.rho_grid[k],
                rhodot: -m.rate_bound,
                a: mat_to_rows(lo),
            });
            vertex_points.push(VertexDoc {
                rho: m.rho_grid[k],
                rhodot: m.rate_bound,
                a: mat_to_rows(hi),
            });
        }
        ReducedDoc {
            n_x: m.n_x,
            n_u: m.n_u,
            n_y: m.n_y,
            rho_grid: m.rho_grid.clone(),
            rate_bound: m.rate_bound,
            points: point_docs(&m.points),
            vertex_points,
            meta: m.meta,
        }
    }

    fn into_model(self) -> Result<ReducedLpvModel> {
        let points = docs_to_points(&self.points, self.n_x, self.n_u, self.n_y)?;
        if self.vertex_points.len() != 2 * self.rho_grid.len() {
            return Err(LpvError::InvalidModel(format!(
                "expected {} vertex_points entries, found {}",
                2 * self.rho_grid.len(),
                self.vertex_points.len()
            )));
        }
        let mut vertex_a = Vec::with_capacity(self.rho_grid.len());
        for (k, pair) in self.vertex_points.chunks_exact(2).enumerate() {
            for (v, want_nu) in pair.iter().zip([-self.rate_bound, self.rate_bound]) {
                if v.rho != self.rho_grid[k] || v.rhodot != want_nu {
                    return Err(LpvError::InvalidModel(format!(
                        "vertex_points[{}] has (rho, rhodot) = ({}, {}), expected ({}, {})",
                        2 * k + usize::from(want_nu == self.rate_bound && self.rate_bound != 0.0),
                        v.rho,
                        v.rhodot,
                        self.rho_grid[k],
                        want_nu
                    )));
                }
            }
            vertex_a.push([
                rows_to_mat(&pair[0].a, k, "vertex A", self.n_x, self.n_x)?,
                rows_to_mat(&pair[1].a, k, "vertex A", self.n_x, self.n_x)?,
            ]);
        }
        let model = ReducedLpvModel {
            n_x: self.n_x,
            n_u: self.n_u,
            n_y: self.n_y,
            rho_grid: self.rho_grid,
            rate_bound: self.rate_bound,
            points,
            vertex_a,
            meta: self.meta,
        };
        model.validate()?;
        Ok(model)
    }
}

fn read_doc<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| LpvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_doc(&text, path)
}

fn parse_doc<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| LpvError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn doc_to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| LpvError::InvalidModel(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| LpvError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_model() -> GridLpvModel {
        let points = vec![
            GridPoint {
                rho: 0.0,
                a: Mat::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
                b: Mat::from_row_slice(2, 1, &[1.0, 0.0]),
                c: Mat::from_row_slice(1, 2, &[1.0, 1.0]),
                d: Mat::from_row_slice(1, 1, &[0.0]),
            },
            GridPoint {
                rho: 0.5,
                a: Mat::from_row_slice(2, 2, &[-1.5, 0.25, 0.1, -2.5]),
                b: Mat::from_row_slice(2, 1, &[0.9, 0.1]),
                c: Mat::from_row_slice(1, 2, &[1.0, 0.5]),
                d: Mat::from_row_slice(1, 1, &[0.1]),
            },
            GridPoint {
                rho: 1.0,
                a: Mat::from_row_slice(2, 2, &[-2.0, 0.0, 0.2, -3.0]),
                b: Mat::from_row_slice(2, 1, &[0.8, 0.2]),
                c: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
                d: Mat::from_row_slice(1, 1, &[0.2]),
            },
        ];
        GridLpvModel::new(vec![0.0, 0.5, 1.0], 0.1, points, 1, 1).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = two_state_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = GridLpvModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.n_x, 2);
    }

    #[test]
    fn non_monotone_grid_rejected() {
        let mut model = two_state_model();
        model.rho_grid = vec![0.0, 0.0, 1.0];
        model.points[1].rho = 0.0;
        let err = model.validate().unwrap_err();
        assert!(matches!(err, LpvError::NonMonotoneGrid { index: 1, .. }));
        assert!(err.to_string().contains("non-monotone grid"));
    }

    #[test]
    fn wrong_shape_names_point_and_matrix() {
        let mut model = two_state_model();
        model.points[2].a = Mat::zeros(3, 2);
        let err = model.validate().unwrap_err();
        match err {
            LpvError::Dimension { point, matrix, .. } => {
                assert_eq!(point, 2);
                assert_eq!(matrix, "A");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_entry_rejected() {
        let mut model = two_state_model();
        model.points[1].b[(0, 0)] = f64::NAN;
        let err = model.validate().unwrap_err();
        assert!(matches!(
            err,
            LpvError::NonFinite {
                point: 1,
                matrix: "B"
            }
        ));
    }

    #[test]
    fn interpolate_exact_at_knots_and_affine_between() {
        let model = two_state_model();
        for (k, &rho) in model.rho_grid.iter().enumerate() {
            let snap = model.interpolate(rho).unwrap();
            assert_eq!(snap.a, model.points[k].a);
            assert_eq!(snap.d, model.points[k].d);
        }
        let mid = model.interpolate(0.25).unwrap();
        let want = (&model.points[0].a + &model.points[1].a) * 0.5;
        assert!((mid.a - want).norm() < 1e-15);
    }

    #[test]
    fn interpolate_out_of_range_errors() {
        let model = two_state_model();
        assert!(matches!(
            model.interpolate(2.0),
            Err(LpvError::RhoOutOfRange { .. })
        ));
        assert!(matches!(
            model.interpolate(-0.1),
            Err(LpvError::RhoOutOfRange { .. })
        ));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let model = two_state_model();
        let err = model.save("/nonexistent-dir/model.json").unwrap_err();
        assert!(matches!(err, LpvError::Io { .. }));
    }

    fn small_reduced() -> ReducedLpvModel {
        let base = two_state_model();
        let vertex_a = base
            .points
            .iter()
            .map(|p| [&p.a - Mat::identity(2, 2) * 0.01, &p.a + Mat::identity(2, 2) * 0.01])
            .collect();
        ReducedLpvModel {
            n_x: 2,
            n_u: 1,
            n_y: 1,
            rho_grid: base.rho_grid.clone(),
            rate_bound: base.rate_bound,
            points: base.points.clone(),
            vertex_a,
            meta: ReducedMeta {
                unstable_states: 0,
                integrators: 0,
            },
        }
    }

    #[test]
    fn reduced_round_trip_preserves_vertices() {
        let model = small_reduced();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reduced.json");
        model.save(&path).unwrap();
        let loaded = ReducedLpvModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        assert_eq!(loaded.vertex_a.len(), 3);
        match AnyModel::load(&path).unwrap() {
            AnyModel::Reduced(r) => assert_eq!(r, model),
            AnyModel::Full(_) => panic!("should detect reduced model"),
        }
    }

    #[test]
    fn reduced_rate_interpolation_is_linear() {
        let model = small_reduced();
        let a_mid = model.a_at(0.25, 0.05).unwrap();
        // base is I*0.01/delta = I*0.1 at every point; at rhodot = 0.05 the
        // rate term is I*0.005.
        let avg = (&model.points[0].a + &model.points[1].a) * 0.5;
        let want = avg + Mat::identity(2, 2) * 0.005;
        assert!((a_mid - want).norm() < 1e-14);
    }
}
