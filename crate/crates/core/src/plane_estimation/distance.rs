//! Corn plane distance from two side-camera views with known relative motion
//! and known plane normal.
//!
//! A feature at pixel `x1` on the plane `n . X + d = 0` has depth
//! `lambda = -d / (n . K^-1 x1)`. In the second view it appears at
//! `d * l + s` (homogeneous), with `l = -K R K^-1 x1 / (n . K^-1 x1)` and
//! `s = K c`. Clearing the denominator gives two equations linear in `d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CornPlaneEstimate, EstimationError, FeatureMatch};
use crate::geometry::{CameraIntrinsics, Pixel, Plane, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DistanceParams {
    pub min_translation: f64,
    pub inlier_px: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for DistanceParams {
    fn default() -> Self {
        Self { min_translation: 0.005, inlier_px: 2.0, iterations: 200, seed: 0 }
    }
}

/// Per-match quantities: `l`, `s`, the ray term `n . K^-1 x1` and the
/// observed second pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEquations {
    pub l: Vec3,
    pub s: Vec3,
    pub ray_dot: f64,
    pub px2: Pixel,
}

impl MatchEquations {
    /// Homogeneous second-view point for plane offset `d`.
    pub fn homogeneous(&self, d: f64) -> Vec3 {
        self.l * d + self.s
    }

    pub fn project(&self, d: f64) -> Option<Pixel> {
        let q = self.homogeneous(d);
        (q.z > 0.0).then(|| Pixel::new(q.x / q.z, q.y / q.z))
    }

    /// Depth of the feature in the first view.
    pub fn depth(&self, d: f64) -> f64 {
        -d / self.ray_dot
    }

    /// The u and v rows `(a, b)` of `a * d = b`.
    pub fn linear_rows(&self) -> [(f64, f64); 2] {
        let (u2, v2) = (self.px2.u, self.px2.v);
        [
            (self.l.x - u2 * self.l.z, u2 * self.s.z - self.s.x),
            (self.l.y - v2 * self.l.z, v2 * self.s.z - self.s.y),
        ]
    }

    /// Nonlinear pixel residual at offset `d`; infinite when the point falls
    /// behind either camera.
    pub fn residual(&self, d: f64) -> f64 {
        if !(self.depth(d) > 0.0) {
            return f64::INFINITY;
        }
        self.project(d).map_or(f64::INFINITY, |p| p.distance(&self.px2))
    }
}

pub fn match_equations(
    m: &FeatureMatch,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    n_p: &Vec3,
) -> MatchEquations {
    let ray = k.inverse_matrix() * m.px1.homogeneous();
    let ray_dot = n_p.dot(&ray);
    let l = -(k.matrix() * t.rotation * ray) / ray_dot;
    let s = k.matrix() * t.translation;
    MatchEquations { l, s, ray_dot, px2: m.px2 }
}

/// Second-view pixel of `px1` assuming it lies on the plane `(n_p, d)`.
pub fn reproject_on_plane(
    px1: &Pixel,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    n_p: &Vec3,
    d: f64,
) -> Option<Pixel> {
    let m = FeatureMatch { px1: *px1, px2: *px1 };
    match_equations(&m, k, t, n_p).project(d)
}

pub fn reprojection_error(
    m: &FeatureMatch,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    n_p: &Vec3,
    d: f64,
) -> f64 {
    match_equations(m, k, t, n_p).residual(d)
}

fn solve(eqs: &[MatchEquations], idx: impl IntoIterator<Item = usize>) -> Option<f64> {
    let (mut ab, mut aa) = (0.0, 0.0);
    for i in idx {
        for (a, b) in eqs[i].linear_rows() {
            ab += a * b;
            aa += a * a;
        }
    }
    (aa > 0.0 && aa.is_finite()).then(|| ab / aa)
}

fn classify(eqs: &[MatchEquations], d: f64, thr: f64) -> Vec<usize> {
    (0..eqs.len()).filter(|&i| eqs[i].residual(d) <= thr).collect()
}

/// RANSAC over single-match hypotheses scored with a truncated quadratic
/// cost, then a least-squares refit of the linear system over the consensus
/// set.
pub fn estimate_plane_distance(
    matches: &[FeatureMatch],
    k: &CameraIntrinsics,
    t: &RigidTransform,
    n_p: &Vec3,
    params: &DistanceParams,
) -> Result<CornPlaneEstimate, EstimationError> {
    let norm = t.translation.norm();
    if !(norm >= params.min_translation) {
        return Err(EstimationError::InsufficientMotion { norm, min: params.min_translation });
    }
    if matches.is_empty() {
        return Err(EstimationError::NoConsensus { inliers: 0 });
    }
    let n_p = n_p.normalize();
    let eqs: Vec<MatchEquations> = matches.iter().map(|m| match_equations(m, k, t, &n_p)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let thr2 = params.inlier_px * params.inlier_px;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut any_in_front = false;
    for _ in 0..params.iterations {
        let j = rng.random_range(0..eqs.len());
        if !eqs[j].ray_dot.is_finite() || eqs[j].ray_dot.abs() < 1e-12 {
            continue;
        }
        let Some(d) = solve(&eqs, [j]) else { continue };
        if !(eqs[j].depth(d) > 0.0) {
            continue;
        }
        any_in_front = true;
        // Truncated quadratic cost: consensus size first, fit quality second.
        let (mut count, mut cost) = (0, 0.0);
        for e in &eqs {
            let r = e.residual(d);
            if r <= params.inlier_px {
                count += 1;
                cost += r * r;
            } else {
                cost += thr2;
            }
        }
        if best.is_none_or(|(_, _, c)| cost < c) {
            best = Some((d, count, cost));
        }
    }
    if !any_in_front {
        return Err(EstimationError::BehindCamera);
    }
    let (mut d, count, _) = best.expect("a hypothesis in front of the camera was scored");
    if count == 0 {
        return Err(EstimationError::NoConsensus { inliers: 0 });
    }

    let mut inliers = classify(&eqs, d, params.inlier_px);
    for _ in 0..10 {
        let Some(refit) = solve(&eqs, inliers.iter().copied()) else { break };
        let next = classify(&eqs, refit, params.inlier_px);
        if next.is_empty() || next.len() < inliers.len() {
            break;
        }
        let converged = next == inliers;
        d = refit;
        inliers = next;
        if converged {
            break;
        }
    }
    if inliers.is_empty() {
        return Err(EstimationError::NoConsensus { inliers: 0 });
    }
    let ss: f64 = inliers.iter().map(|&i| eqs[i].residual(d).powi(2)).sum();
    Ok(CornPlaneEstimate {
        plane: Plane { normal: n_p, offset: d },
        inlier_count: inliers.len(),
        rms_reprojection: (ss / inliers.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_homography, backproject_ray, intersect_ray_plane, plane_homography, project};

    #[test]
    fn hand_solved_example() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let t = RigidTransform::from_translation(Vec3::new(-1.0, 0.0, 0.0));
        let m = FeatureMatch { px1: Pixel::new(0.0, 0.0), px2: Pixel::new(-0.5, 0.0) };
        let p = DistanceParams { min_translation: 0.01, ..Default::default() };
        let est = estimate_plane_distance(&[m], &k, &t, &Vec3::new(0.0, 0.0, -1.0), &p).unwrap();
        assert!((est.plane.offset - 2.0).abs() < 1e-12);
        assert_eq!(est.inlier_count, 1);
    }

    #[test]
    fn zero_translation_is_rejected() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let m = FeatureMatch { px1: Pixel::new(0.0, 0.0), px2: Pixel::new(0.0, 0.0) };
        let r = estimate_plane_distance(&[m], &k, &RigidTransform::identity(), &-Vec3::z(), &Default::default());
        assert!(matches!(r, Err(EstimationError::InsufficientMotion { .. })));
    }

    #[test]
    fn empty_matches_have_no_consensus() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let t = RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let r = estimate_plane_distance(&[], &k, &t, &-Vec3::z(), &Default::default());
        assert!(matches!(r, Err(EstimationError::NoConsensus { .. })));
    }

    #[test]
    fn behind_camera_detected() {
        // Parallax in the wrong direction: only a negative depth explains it.
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let t = RigidTransform::from_translation(Vec3::new(-1.0, 0.0, 0.0));
        let m = FeatureMatch { px1: Pixel::new(0.0, 0.0), px2: Pixel::new(0.5, 0.0) };
        let r = estimate_plane_distance(&[m], &k, &t, &Vec3::new(0.0, 0.0, -1.0), &Default::default());
        assert!(matches!(r, Err(EstimationError::BehindCamera)));
    }

    #[test]
    fn agrees_with_homography_on_plane() {
        let k = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap();
        let t = RigidTransform::from_axis_angle(Vec3::new(0.01, -0.02, 0.005), Vec3::new(-0.05, 0.01, 0.002));
        let plane = Plane::new(Vec3::new(0.05, 0.02, -1.0), 0.4).unwrap();
        let h = plane_homography(&k, &t, &plane).unwrap();
        for (u, v) in [(10.0, 20.0), (320.0, 240.0), (600.0, 450.0)] {
            let px = Pixel::new(u, v);
            let via_eq = reproject_on_plane(&px, &k, &t, &plane.normal, plane.offset).unwrap();
            assert!(via_eq.distance(&apply_homography(&h, &px)) < 1e-9);
            let x = intersect_ray_plane(&Vec3::zeros(), &backproject_ray(&k, &px), &plane).unwrap();
            assert!(via_eq.distance(&project(&k, &t.apply(&x)).unwrap()) < 1e-9);
        }
    }
}
