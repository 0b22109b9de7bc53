//! Baseline corn-plane estimators: corridor (vanishing point) construction
//! and direct side-view fitting of the plane distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{corn_plane_normal, CornPlaneEstimate, EstimationError};
use crate::geometry::{backproject_ray, intersect_ray_plane, CameraIntrinsics, Pixel, Plane, Vec3};

/// Corn plane from a vanishing point and one pixel on the corn line, given
/// the ground plane in the same camera frame.
pub fn corridor_plane(
    vp: &Pixel,
    line_px: &Pixel,
    k: &CameraIntrinsics,
    ground: &Plane,
) -> Result<CornPlaneEstimate, EstimationError> {
    let n_g = ground.normal.normalize();
    let dir = backproject_ray(k, vp);
    let v_l = dir - n_g * n_g.dot(&dir);
    if !(v_l.norm() > 1e-9) {
        return Err(EstimationError::NearParallelInputs(n_g.dot(&dir).abs()));
    }
    let v_l = v_l.normalize();
    let n_p = corn_plane_normal(&n_g, &v_l)?;
    let on_line = intersect_ray_plane(&Vec3::zeros(), &backproject_ray(k, line_px), ground)?;
    Ok(CornPlaneEstimate {
        plane: Plane { normal: n_p, offset: -n_p.dot(&on_line) },
        inlier_count: 1,
        rms_reprojection: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SideviewParams {
    pub inlier_m: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SideviewParams {
    fn default() -> Self {
        Self { inlier_m: 0.02, iterations: 200, seed: 0 }
    }
}

/// Plane distance from side-view 3D samples with a known normal. Each sample
/// alone fixes `d = -n . P`; RANSAC picks the best-supported value and the
/// result is the inlier mean.
pub fn sideview_plane_distance(
    points: &[Vec3],
    n_p: &Vec3,
    params: &SideviewParams,
) -> Result<CornPlaneEstimate, EstimationError> {
    if points.is_empty() {
        return Err(EstimationError::NoConsensus { inliers: 0 });
    }
    let n_p = n_p.normalize();
    let offsets: Vec<f64> = points.iter().map(|p| -n_p.dot(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, usize)> = None;
    for _ in 0..params.iterations.max(1) {
        let d = offsets[rng.random_range(0..offsets.len())];
        let count = offsets.iter().filter(|o| (*o - d).abs() <= params.inlier_m).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((d, count));
        }
    }
    let (d, _) = best.expect("at least one iteration");
    let inliers: Vec<f64> = offsets.iter().copied().filter(|o| (o - d).abs() <= params.inlier_m).collect();
    let mean = inliers.iter().sum::<f64>() / inliers.len() as f64;
    let rms = (inliers.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / inliers.len() as f64).sqrt();
    Ok(CornPlaneEstimate {
        plane: Plane { normal: n_p, offset: mean },
        inlier_count: inliers.len(),
        rms_reprojection: rms,
    })
}
