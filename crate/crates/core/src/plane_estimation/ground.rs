use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EstimationError, PcaAxes, PlaneFit};
use crate::geometry::{centroid, Mat3, Plane, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { threshold: 0.01, iterations: 200, seed: 0 }
    }
}

fn covariance(points: &[Vec3]) -> (Vec3, Mat3) {
    let c = centroid(points);
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    (c, cov / points.len() as f64)
}

pub fn pca_axes(points: &[Vec3]) -> Result<PcaAxes, EstimationError> {
    if points.len() < 3 {
        return Err(EstimationError::DegenerateInput(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let (_, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    if !(eigenvalues[0] > 0.0) {
        return Err(EstimationError::DegenerateInput("zero covariance".into()));
    }
    let axes = order.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    Ok(PcaAxes { axes, eigenvalues })
}

/// Least-squares plane: smallest principal axis through the centroid.
fn fit_plane_lsq(points: &[Vec3]) -> Result<Plane, EstimationError> {
    let (c, _) = covariance(points);
    let pca = pca_axes(points)?;
    Ok(Plane::from_point_normal(&c, &pca.smallest()))
}

fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Plane> {
    let n = (b - a).cross(&(c - a));
    let scale = (b - a).norm() * (c - a).norm();
    if !(n.norm() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    Some(Plane::from_point_normal(a, &n))
}

fn inliers_of(points: &[Vec3], plane: &Plane, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.signed_distance(p).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

fn rms(points: &[Vec3], idx: &[usize], plane: &Plane) -> f64 {
    let ss: f64 = idx.iter().map(|&i| plane.signed_distance(&points[i]).powi(2)).sum();
    (ss / idx.len().max(1) as f64).sqrt()
}

/// RANSAC over 3-point hypotheses followed by a least-squares refit on the
/// consensus set. The earliest hypothesis wins ties.
pub fn ransac_plane_fit(points: &[Vec3], params: &RansacParams) -> Result<PlaneFit, EstimationError> {
    if points.len() < 3 {
        return Err(EstimationError::DegenerateInput(format!("{} points", points.len())));
    }
    let pca = pca_axes(points)?;
    if !(pca.eigenvalues[1] > 1e-12 * pca.eigenvalues[0]) {
        return Err(EstimationError::DegenerateInput("points are collinear".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..params.iterations {
        let idx = rand::seq::index::sample(&mut rng, points.len(), 3);
        let Some(plane) = plane_through(&points[idx.index(0)], &points[idx.index(1)], &points[idx.index(2)])
        else {
            continue;
        };
        let count = points
            .iter()
            .filter(|p| plane.signed_distance(p).abs() <= params.threshold)
            .count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((plane, count));
        }
    }
    let Some((hypothesis, count)) = best else {
        return Err(EstimationError::NoConsensus { inliers: 0 });
    };
    if count < 3 {
        return Err(EstimationError::NoConsensus { inliers: count });
    }

    let mut plane = hypothesis;
    let mut inliers = inliers_of(points, &plane, params.threshold);
    for _ in 0..3 {
        let subset: Vec<Vec3> = inliers.iter().map(|&i| points[i]).collect();
        let Ok(refit) = fit_plane_lsq(&subset) else { break };
        let refit_inliers = inliers_of(points, &refit, params.threshold);
        if refit_inliers.len() < 3 || refit_inliers.len() < inliers.len() {
            break;
        }
        let converged = refit_inliers == inliers;
        plane = refit;
        inliers = refit_inliers;
        if converged {
            break;
        }
    }
    let rms_residual = rms(points, &inliers, &plane);
    Ok(PlaneFit { plane, inlier_indices: inliers, rms_residual })
}

/// Voxel-grid downsampling: one centroid per occupied cubic cell, ordered by
/// cell index.
pub fn downsample_uniform(points: &[Vec3], cell: f64) -> Vec<Vec3> {
    assert!(cell > 0.0, "cell size must be positive");
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in points {
        let key = (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vec3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    cells.into_values().map(|(sum, n)| sum / n as f64).collect()
}

/// Corn plane normal as the normalized cross product of the ground normal
/// and the row direction.
pub fn corn_plane_normal(n_g: &Vec3, v_l: &Vec3) -> Result<Vec3, EstimationError> {
    let dot = n_g.normalize().dot(&v_l.normalize());
    if !(dot.abs() < 0.5) {
        return Err(EstimationError::NearParallelInputs(dot.abs()));
    }
    Ok(n_g.cross(v_l).normalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};
    use std::collections::BTreeSet;

    #[test]
    fn exact_plane_recovered() {
        let pts: Vec<Vec3> =
            (0..100).map(|i| Vec3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.07, 0.0)).collect();
        let fit = ransac_plane_fit(&pts, &RansacParams::default()).unwrap();
        assert!((fit.plane.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!(fit.plane.offset.abs() < 1e-12);
        assert_eq!(fit.inlier_indices.len(), 100);
    }

    #[test]
    fn collinear_points_rejected() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 2.0, 2.0)];
        assert!(matches!(
            ransac_plane_fit(&pts, &RansacParams::default()),
            Err(EstimationError::DegenerateInput(_))
        ));
        assert!(matches!(
            ransac_plane_fit(&pts[..2], &RansacParams::default()),
            Err(EstimationError::DegenerateInput(_))
        ));
    }

    fn noisy_plane_with_outliers(seed: u64) -> (Vec<Vec3>, Plane) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = Plane::new(Vec3::new(0.1, -0.05, 1.0), -0.4).unwrap();
        let noise = Normal::new(0.0, 0.002).unwrap();
        let (u, v) = {
            let a = truth.normal.cross(&Vec3::x()).normalize();
            (a, truth.normal.cross(&a))
        };
        let origin = -truth.normal * truth.offset;
        let mut pts = Vec::new();
        for _ in 0..70 {
            let p = origin
                + u * rng.random_range(-1.0..1.0)
                + v * rng.random_range(-1.0..1.0)
                + truth.normal * noise.sample(&mut rng);
            pts.push(p);
        }
        for _ in 0..30 {
            pts.push(origin + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        (pts, truth)
    }

    #[test]
    fn robust_to_thirty_percent_outliers() {
        let mut good = 0;
        for seed in 0..100 {
            let (pts, truth) = noisy_plane_with_outliers(seed);
            let fit = ransac_plane_fit(&pts, &RansacParams { seed, ..Default::default() }).unwrap();
            let plane = if fit.plane.normal.dot(&truth.normal) < 0.0 { fit.plane.flipped() } else { fit.plane };
            let angle = plane.normal.dot(&truth.normal).clamp(-1.0, 1.0).acos().to_degrees();
            if angle < 1.0 && (plane.offset - truth.offset).abs() < 0.005 {
                good += 1;
            }
        }
        assert!(good >= 95, "{good}/100");
    }

    #[test]
    fn ransac_is_deterministic() {
        let (pts, _) = noisy_plane_with_outliers(3);
        let p = RansacParams { seed: 42, ..Default::default() };
        assert_eq!(ransac_plane_fit(&pts, &p).unwrap(), ransac_plane_fit(&pts, &p).unwrap());
    }

    #[test]
    fn downsample_examples() {
        let pts = vec![Vec3::new(0.01, 0.01, 0.01), Vec3::new(0.03, 0.02, 0.04), Vec3::new(0.02, 0.03, 0.01)];
        let out = downsample_uniform(&pts, 0.05);
        assert_eq!(out.len(), 1);
        assert!((out[0] - centroid(&pts)).norm() < 1e-15);

        let sparse = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let out = downsample_uniform(&sparse, 0.1);
        assert_eq!(out.len(), 3);
        for p in &sparse {
            assert!(out.contains(p));
        }
    }

    #[test]
    fn downsample_matches_bucketing_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers: Vec<Vec3> = (0..8)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.3)))
            .collect();
        let n = Normal::new(0.0, 0.08).unwrap();
        let pts: Vec<Vec3> = (0..10_000)
            .map(|i| centers[i % 8] + Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)))
            .collect();
        let mut occupied = BTreeSet::new();
        for p in &pts {
            let k = |x: f64| (x / 0.05).floor() as i64;
            occupied.insert((k(p.x), k(p.y), k(p.z)));
        }
        assert_eq!(downsample_uniform(&pts, 0.05).len(), occupied.len());
    }

    #[test]
    fn pca_axis_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..200)
            .map(|i| Vec3::new(i as f64 * 0.01, rng.random_range(-0.05..0.05), rng.random_range(-0.001..0.001)))
            .collect();
        let pca = pca_axes(&pts).unwrap();
        assert!(pca.axes[0].x.abs() > 0.999);
        assert!(pca.axes[2].z.abs() > 0.999);
        assert!(pca.eigenvalues[0] >= pca.eigenvalues[1] && pca.eigenvalues[1] >= pca.eigenvalues[2]);
    }

    #[test]
    fn pca_isotropic_has_similar_eigenvalues() {
        let mut pts = Vec::new();
        for s in [-1.0, 1.0] {
            pts.push(Vec3::x() * s);
            pts.push(Vec3::y() * s);
            pts.push(Vec3::z() * s);
        }
        let pca = pca_axes(&pts).unwrap();
        assert!((pca.eigenvalues[0] - pca.eigenvalues[2]).abs() < 1e-12);
        assert!(pca_axes(&[Vec3::zeros(); 4]).is_err());
    }

    #[test]
    fn corn_normal_examples() {
        let n = corn_plane_normal(&Vec3::new(0.0, -1.0, 0.0), &Vec3::z()).unwrap();
        assert_eq!(n, Vec3::new(-1.0, 0.0, 0.0));
        let n = corn_plane_normal(&Vec3::z(), &Vec3::x()).unwrap();
        assert_eq!(n, Vec3::y());
        assert!(matches!(
            corn_plane_normal(&Vec3::z(), &Vec3::new(0.0, 0.1, 1.0)),
            Err(EstimationError::NearParallelInputs(_))
        ));
    }

    proptest! {
        #[test]
        fn corn_normal_orthogonal_to_inputs(a in prop::array::uniform3(-1.0..1.0f64), b in prop::array::uniform3(-1.0..1.0f64)) {
            let a = Vec3::from(a);
            prop_assume!(a.norm() > 0.1);
            let a = a.normalize();
            let b = Vec3::from(b);
            let b = b - a * a.dot(&b);
            prop_assume!(b.norm() > 0.1);
            let b = b.normalize();
            let n = corn_plane_normal(&a, &b).unwrap();
            prop_assert!(n.dot(&a).abs() < 1e-12);
            prop_assert!(n.dot(&b).abs() < 1e-12);
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pca_axes_orthonormal(pts in prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 3..40)) {
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            if let Ok(p) = pca_axes(&pts) {
                for i in 0..3 {
                    for j in 0..3 {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((p.axes[i].dot(&p.axes[j]) - expect).abs() < 1e-9);
                    }
                }
                prop_assert!(p.eigenvalues[0] >= p.eigenvalues[1] && p.eigenvalues[1] >= p.eigenvalues[2]);
            }
        }
    }
}
