//! Ground plane, row direction and corn plane estimation.
//!
//! The corn plane normal comes from the front camera's ground cloud (row
//! direction crossed with ground normal); its distance comes either from
//! multi-view reprojection over side-camera feature matches or from one of
//! the baseline estimators in [`baselines`].

mod baselines;
mod distance;
mod ground;

pub use baselines::{corridor_plane, sideview_plane_distance, SideviewParams};
pub use distance::{
    estimate_plane_distance, match_equations, reprojection_error, reproject_on_plane,
    DistanceParams, MatchEquations,
};
pub use ground::{corn_plane_normal, downsample_uniform, pca_axes, ransac_plane_fit, RansacParams};

use crate::geometry::{GeometryError, Pixel, Plane, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no consensus: best hypothesis has {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("inputs are nearly parallel (|dot| = {0})")]
    NearParallelInputs(f64),
    #[error("insufficient motion: translation {norm} m below {min} m")]
    InsufficientMotion { norm: f64, min: f64 },
    #[error("every hypothesis places the features behind the camera")]
    BehindCamera,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Result of a robust plane fit over a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    pub inlier_indices: Vec<usize>,
    pub rms_residual: f64,
}

/// A feature correspondence between two consecutive side-camera frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub px1: Pixel,
    pub px2: Pixel,
}

/// Corn plane `(n_p, d_p)` in the observing camera's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornPlaneEstimate {
    pub plane: Plane,
    pub inlier_count: usize,
    /// RMS residual over inliers: pixels for the multi-view estimator, meters
    /// for the side-view fit, zero for the corridor construction.
    pub rms_reprojection: f64,
}

/// Principal axes sorted by descending eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaAxes {
    pub axes: [Vec3; 3],
    pub eigenvalues: [f64; 3],
}

impl PcaAxes {
    pub fn largest(&self) -> Vec3 {
        self.axes[0]
    }

    pub fn smallest(&self) -> Vec3 {
        self.axes[2]
    }
}
