//! Single JSON pipeline configuration with documented defaults for every
//! tunable. Unknown keys are rejected so typos fail loudly rather than
//! silently falling back to defaults.

use crate::balred::{ReductionMode, SelectionRule};
use crate::clustering::{ClusterConfig, CutRule};
use crate::error::{LpvError, Result};
use crate::gramian::{GramianBackend, GramianConfig};
use crate::modal::ModalConfig;
use crate::smoothing::SmoothingConfig;
use crate::tracking::{SamplingTime, TrackingConfig};
use crate::validation::{FrequencyGrid, SimScenario};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    /// Discretization step mapping eigenvalues onto the unit disk;
    /// `null` selects `min(0.01, 0.5 / max|λ|)` automatically.
    pub sampling_time: Option<f64>,
    /// `|λ| ≤ integrator_tol` marks an integrator mode.
    pub integrator_tol: f64,
    /// Trajectory-distance bound under which modes count as repeated.
    pub multiplicity_threshold: f64,
    /// Weight the matching metric by eigenvector misalignment.
    pub mac_weighting: bool,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            sampling_time: None,
            integrator_tol: 1e-8,
            multiplicity_threshold: 1e-6,
            mac_weighting: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    /// Maximum tolerated relative state-matrix change per repaired point.
    pub repair_budget: f64,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self { repair_budget: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalSection {
    /// Relative output-discrepancy bound below which the parameter-rate
    /// coupling is neglected.
    pub drop_tol: f64,
}

impl Default for ModalSection {
    fn default() -> Self {
        Self { drop_tol: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    /// Dendrogram cut height; `null` picks the largest threshold whose
    /// clusters respect `max_cluster_size`.
    pub cut_threshold: Option<f64>,
    pub max_cluster_size: usize,
    /// Weight of the optional coupling-energy distance penalty.
    pub e2_penalty_weight: f64,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            cut_threshold: None,
            max_cluster_size: 40,
            e2_penalty_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianBackendChoice {
    Pointwise,
    Barrier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GramianSection {
    pub backend: GramianBackendChoice,
    /// Strict-feasibility margin ε; `null` selects `1e−6 · max‖A(ρ_k)‖₂`.
    pub margin: Option<f64>,
    /// Alternating refinement iteration cap.
    pub max_iters: usize,
}

impl Default for GramianSection {
    fn default() -> Self {
        Self {
            backend: GramianBackendChoice::Pointwise,
            margin: None,
            max_iters: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionModeChoice {
    Truncate,
    Residualize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalredSection {
    /// Keep singular-value trajectories with `max_ρ σ_j > eta · max σ`.
    pub eta: f64,
    /// Explicit kept orders per cluster (cluster index order); clusters
    /// beyond the list fall back to the `eta` rule.
    pub orders: Option<Vec<usize>>,
    pub mode: ReductionModeChoice,
}

impl Default for BalredSection {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            orders: None,
            mode: ReductionModeChoice::Truncate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    pub frequency_count: usize,
    pub frequency_min: f64,
    pub frequency_max: f64,
    /// Scheduling samples for the gap sweep; `null` uses the grid points
    /// plus their midpoints.
    pub rho_samples: Option<Vec<f64>>,
    /// Simulation comparison scenarios; `null` derives defaults from the
    /// model (rate-respecting sine and frozen mid-range schedules).
    pub scenarios: Option<Vec<SimScenario>>,
    /// Max admissible pointwise ν-gap (drives the validate exit code).
    pub gap_bound: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            frequency_count: 400,
            frequency_min: 1e-3,
            frequency_max: 1e3,
            rho_samples: None,
            scenarios: None,
            gap_bound: 0.2,
        }
    }
}

/// Root configuration; every field has a documented default and unknown
/// keys are rejected at every level.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tracking: TrackingSection,
    pub smoothing: SmoothingSection,
    pub modal: ModalSection,
    pub clustering: ClusteringSection,
    pub gramian: GramianSection,
    pub balred: BalredSection,
    pub validation: ValidationSection,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LpvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            LpvError::InvalidConfig(msg) => {
                LpvError::InvalidConfig(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| LpvError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(ts) = self.tracking.sampling_time {
            if !(ts > 0.0) || !ts.is_finite() {
                return Err(LpvError::InvalidConfig(format!(
                    "tracking.sampling_time must be positive and finite, got {ts}"
                )));
            }
        }
        if !(self.smoothing.repair_budget > 0.0) {
            return Err(LpvError::InvalidConfig(format!(
                "smoothing.repair_budget must be positive, got {}",
                self.smoothing.repair_budget
            )));
        }
        if !(self.modal.drop_tol >= 0.0) {
            return Err(LpvError::InvalidConfig(format!(
                "modal.drop_tol must be nonnegative, got {}",
                self.modal.drop_tol
            )));
        }
        if self.clustering.max_cluster_size < 2 {
            return Err(LpvError::InvalidConfig(format!(
                "clustering.max_cluster_size must be at least 2, got {}",
                self.clustering.max_cluster_size
            )));
        }
        if !(self.balred.eta >= 0.0) {
            return Err(LpvError::InvalidConfig(format!(
                "balred.eta must be nonnegative, got {}",
                self.balred.eta
            )));
        }
        if !(self.validation.gap_bound > 0.0) {
            return Err(LpvError::InvalidConfig(format!(
                "validation.gap_bound must be positive, got {}",
                self.validation.gap_bound
            )));
        }
        // The frequency grid constructor enforces its own invariants.
        self.frequency_grid()?;
        Ok(())
    }

    pub fn tracking_config(&self) -> TrackingConfig {
        TrackingConfig {
            sampling: match self.tracking.sampling_time {
                Some(ts) => SamplingTime::Fixed(ts),
                None => SamplingTime::Auto,
            },
            integrator_tol: self.tracking.integrator_tol,
            mac_weighting: self.tracking.mac_weighting,
            ..TrackingConfig::default()
        }
    }

    pub fn smoothing_config(&self) -> SmoothingConfig {
        SmoothingConfig {
            repair_budget: self.smoothing.repair_budget,
            ..SmoothingConfig::default()
        }
    }

    pub fn modal_config(&self) -> ModalConfig {
        ModalConfig {
            drop_tol: self.modal.drop_tol,
            ..ModalConfig::default()
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            cut: match self.clustering.cut_threshold {
                Some(t) => CutRule::Threshold(t),
                None => CutRule::Auto,
            },
            max_cluster_size: self.clustering.max_cluster_size,
            e2_penalty_weight: self.clustering.e2_penalty_weight,
        }
    }

    pub fn gramian_config(&self) -> GramianConfig {
        GramianConfig {
            backend: match self.gramian.backend {
                GramianBackendChoice::Pointwise => GramianBackend::Pointwise,
                GramianBackendChoice::Barrier => GramianBackend::Barrier,
            },
            margin: self.gramian.margin,
            max_iters: self.gramian.max_iters,
            ..GramianConfig::default()
        }
    }

    /// Order-selection rule for cluster `idx`.
    pub fn selection_rule(&self, idx: usize) -> SelectionRule {
        match self.balred.orders.as_ref().and_then(|o| o.get(idx)) {
            Some(&r) => SelectionRule::Explicit(r),
            None => SelectionRule::Threshold(self.balred.eta),
        }
    }

    pub fn reduction_mode(&self) -> ReductionMode {
        match self.balred.mode {
            ReductionModeChoice::Truncate => ReductionMode::Truncate,
            ReductionModeChoice::Residualize => ReductionMode::Residualize,
        }
    }

    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::log_spaced(
            self.validation.frequency_min,
            self.validation.frequency_max,
            self.validation.frequency_count,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.clustering.max_cluster_size, 40);
        assert_eq!(cfg.balred.eta, 1e-2);
        assert_eq!(cfg.gramian.backend, GramianBackendChoice::Pointwise);
        assert_eq!(cfg.validation.frequency_count, 400);
        assert_eq!(cfg.validation.gap_bound, 0.2);
        assert!(cfg.tracking.sampling_time.is_none());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        assert!(matches!(
            PipelineConfig::from_json(r#"{"tracknig": {}}"#),
            Err(LpvError::InvalidConfig(_))
        ));
        assert!(matches!(
            PipelineConfig::from_json(r#"{"tracking": {"t_s": 0.1}}"#),
            Err(LpvError::InvalidConfig(_))
        ));
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = PipelineConfig::from_json(
            r#"{"clustering": {"max_cluster_size": 10}, "seed": 7}"#,
        )
        .unwrap();
        assert_eq!(cfg.clustering.max_cluster_size, 10);
        assert_eq!(cfg.seed, 7);
        assert!(cfg.clustering.cut_threshold.is_none());
        assert_eq!(cfg.balred.eta, 1e-2);
    }

    #[test]
    fn conversions_map_choices() {
        let cfg = PipelineConfig::from_json(
            r#"{
                "tracking": {"sampling_time": 0.005},
                "clustering": {"cut_threshold": 0.3},
                "gramian": {"backend": "barrier"},
                "balred": {"orders": [3, 2], "mode": "residualize"}
            }"#,
        )
        .unwrap();
        assert_eq!(
            cfg.tracking_config().sampling,
            SamplingTime::Fixed(0.005)
        );
        assert_eq!(cfg.cluster_config().cut, CutRule::Threshold(0.3));
        assert_eq!(cfg.gramian_config().backend, GramianBackend::Barrier);
        assert_eq!(cfg.selection_rule(0), SelectionRule::Explicit(3));
        assert_eq!(cfg.selection_rule(1), SelectionRule::Explicit(2));
        assert_eq!(cfg.selection_rule(2), SelectionRule::Threshold(1e-2));
        assert_eq!(cfg.reduction_mode(), ReductionMode::Residualize);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_json(r#"{"tracking": {"sampling_time": -1.0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"clustering": {"max_cluster_size": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(
            r#"{"validation": {"frequency_min": 10.0, "frequency_max": 1.0}}"#
        )
        .is_err());
    }

    #[test]
    fn round_trip_preserves_values() {
        let cfg = PipelineConfig::from_json(r#"{"seed": 11, "modal": {"drop_tol": 0.1}}"#).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = PipelineConfig::from_json(&text).unwrap();
        assert_eq!(back.seed, 11);
        assert_eq!(back.modal.drop_tol, 0.1);
    }
}
