//! Model order reduction for grid-based linear parameter-varying (LPV)
//! systems by approximate modal decomposition.
//!
//! The reduction pipeline takes a state-space model whose matrices are
//! sampled on a one-dimensional scheduling-parameter grid and
//!
//! 1. computes per-grid-point eigendecompositions and tracks eigenvalue
//!    trajectories across the grid via minimum-cost matching
//!    ([`tracking`]),
//! 2. smooths the associated eigenvector sequences into a differentiable
//!    modal transformation using complex Procrustes alignment
//!    ([`smoothing`]),
//! 3. brings the model into block-diagonal modal form with an explicit
//!    parameter-rate coupling term ([`modal`]),
//! 4. groups dynamically similar modes by complete-linkage hierarchical
//!    clustering ([`clustering`]),
//! 5. computes parameter-varying Gramians per cluster ([`gramian`]) and
//!    reduces each cluster independently by parameter-varying balanced
//!    truncation ([`balred`]), and
//! 6. reassembles the cluster reductions, preserved unstable dynamics and
//!    integrators into a reduced model whose state matrix depends on both
//!    the parameter and its rate ([`pipeline`]).
//!
//! Supporting modules provide synthetic benchmark generation with retained
//! ground truth ([`benchgen`]), time- and frequency-domain validation
//! including the ν-gap metric ([`validation`]), fixed-step LPV simulation
//! ([`sim`]), and CSV/JSON artifact export ([`export`]).

pub mod assignment;
pub mod balred;
pub mod benchgen;
pub mod clustering;
pub mod config;
pub mod error;
pub mod export;
pub mod gramian;
pub mod modal;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod sim;
pub mod smoothing;
pub mod tracking;
pub mod validation;

pub use error::{LpvError, Result};
pub use model::{AnyModel, GridLpvModel, GridPoint, LtiSnapshot, ReducedLpvModel};

use nalgebra::{DMatrix, DVector};

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;
/// Dense real vector.
pub type Vec64 = DVector<f64>;
/// Complex scalar.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex vector.
pub type CVec = DVector<C64>;
