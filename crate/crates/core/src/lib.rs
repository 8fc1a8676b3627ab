//! Articulated object reconstruction from two volumetric scans.
//!
//! Given explicit reconstructions (signed distance, color, visibility) of an
//! unknown multi-part object at two articulation states, this crate recovers
//! the articulation model that relates them: a part segmentation field,
//! per-part rigid motions, joint types and axes, and segmented part meshes.
//!
//! The pipeline is organized as follows:
//!
//! - [`volume`] — dense voxel fields, depth fusion, isosurface extraction,
//!   view-based visibility.
//! - [`scenegen`] — procedural ground-truth scenes (geometry, joints, rendered
//!   depth views, synthetic pixel matches) used as test oracles.
//! - [`articulation`] — the articulation model: segmentation logits volume,
//!   6D-parameterized per-part motions, and the point correspondence field.
//! - [`losses`] — differentiable objectives (consistency, matching, collision)
//!   with analytic gradients.
//! - [`optim`] — Adam-based optimization loop with a deterministic mode.
//! - [`extract`] — conversion of the optimized state into an explicit
//!   articulated object (joint classification, axis parameters, part meshes).
//! - [`metrics`] — evaluation against ground truth (Chamfer distances, axis
//!   and motion errors, part matching).
//! - [`io`] — on-disk formats for grids, views, matches, and meshes.

pub mod articulation;
pub mod extract;
pub mod io;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod scenegen;
pub mod volume;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("optimization diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
