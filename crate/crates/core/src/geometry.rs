//! Pinhole cameras, rigid transforms and planes.
//!
//! Camera frames are x-right, y-down, z-forward. A [`RigidTransform`] maps
//! coordinates of its source frame into its target frame: `X_b = R * X_a + c`.
//! Planes are `n . X + d = 0` with a unit normal and no sign constraint on `d`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for rotation orthonormality and determinant checks.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Rays with `|n . dir|` below this are treated as parallel to a plane.
pub const PARALLEL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("ray is parallel to plane (|n.dir| = {0:e})")]
    RayParallelToPlane(f64),
    #[error("plane intersection lies behind the ray origin (t = {0})")]
    IntersectionBehindCamera(f64),
    #[error("plane passes through the camera centre; homography undefined")]
    ZeroOffsetPlane,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal (residual {0:e})")]
    NotOrthonormal(f64),
    #[error("plane normal is not unit length (norm {0})")]
    NonUnitNormal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Image coordinates in pixels, u rightward and v downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Homogeneous lift `[u v 1]`.
    pub fn homogeneous(&self) -> Vec3 {
        Vec3::new(self.u, self.v, 1.0)
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Rotation plus translation, `X_target = rotation * X_source + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TransformWire", into = "TransformWire")]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// JSON form: row-major rotation `R` and translation `c`.
#[derive(Serialize, Deserialize)]
struct TransformWire {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    c: [f64; 3],
}

impl From<TransformWire> for RigidTransform {
    fn from(w: TransformWire) -> Self {
        let r = &w.r;
        RigidTransform {
            rotation: Mat3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vec3::new(w.c[0], w.c[1], w.c[2]),
        }
    }
}

impl From<RigidTransform> for TransformWire {
    fn from(t: RigidTransform) -> Self {
        let m = &t.rotation;
        TransformWire {
            r: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            c: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Builds a transform after checking `R^T R = I` and `det R = +1`.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let t = Self { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation }
    }

    /// Rotation from an axis-angle vector (radians times unit axis).
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        let rotation = Rotation3::new(axis_angle).into_inner();
        Self { rotation, translation }
    }

    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        ortho.max((r.determinant() - 1.0).abs())
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let res = self.orthonormality_residual();
        if !(res <= ORTHONORMAL_TOL) {
            return Err(GeometryError::NotOrthonormal(res));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Re-projects the rotation onto SO(3) via SVD. Used after long chains of
    /// compositions.
    pub fn renormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        RigidTransform { rotation: r, translation: self.translation }
    }

    /// Expresses a plane given in this transform's source frame in its target frame.
    pub fn transform_plane(&self, plane: &Plane) -> Plane {
        let normal = self.rotation * plane.normal;
        Plane { normal, offset: plane.offset - normal.dot(&self.translation) }
    }
}

/// `normal . X + offset = 0`, with unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PlaneWire", into = "PlaneWire")]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

#[derive(Serialize, Deserialize)]
struct PlaneWire {
    n: [f64; 3],
    d: f64,
}

impl From<PlaneWire> for Plane {
    fn from(w: PlaneWire) -> Self {
        Plane { normal: Vec3::new(w.n[0], w.n[1], w.n[2]), offset: w.d }
    }
}

impl From<Plane> for PlaneWire {
    fn from(p: Plane) -> Self {
        PlaneWire { n: [p.normal.x, p.normal.y, p.normal.z], d: p.offset }
    }
}

impl Plane {
    /// Normalizes `normal` (and scales `offset` accordingly).
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeometryError> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GeometryError::NonUnitNormal(norm));
        }
        Ok(Self { normal: normal / norm, offset: offset / norm })
    }

    /// Plane through `point` with the given (unit) normal.
    pub fn from_point_normal(point: &Vec3, normal: &Vec3) -> Self {
        let n = normal.normalize();
        Self { normal: n, offset: -n.dot(point) }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn flipped(&self) -> Plane {
        Plane { normal: -self.normal, offset: -self.offset }
    }

    /// Orients the plane so that `point` lies on its positive side.
    pub fn facing(&self, point: &Vec3) -> Plane {
        if self.signed_distance(point) < 0.0 {
            self.flipped()
        } else {
            *self
        }
    }
}

pub fn project(k: &CameraIntrinsics, point: &Vec3) -> Result<Pixel, GeometryError> {
    if !(point.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(point.z));
    }
    Ok(Pixel { u: k.fx * point.x / point.z + k.cx, v: k.fy * point.y / point.z + k.cy })
}

/// Unit ray through `px`; always has positive z.
pub fn backproject_ray(k: &CameraIntrinsics, px: &Pixel) -> Vec3 {
    Vec3::new((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0).normalize()
}

pub fn intersect_ray_plane(origin: &Vec3, dir: &Vec3, plane: &Plane) -> Result<Vec3, GeometryError> {
    let denom = plane.normal.dot(dir);
    if denom.abs() < PARALLEL_TOL {
        return Err(GeometryError::RayParallelToPlane(denom.abs()));
    }
    let t = -(plane.normal.dot(origin) + plane.offset) / denom;
    if !(t > 0.0) {
        return Err(GeometryError::IntersectionBehindCamera(t));
    }
    Ok(origin + dir * t)
}

/// Homography induced by `plane` (expressed in frame 1) between two views of
/// the same camera related by `t` (frame 1 -> frame 2):
/// `H = K (R - c n^T / d) K^-1`.
pub fn plane_homography(
    k: &CameraIntrinsics,
    t: &RigidTransform,
    plane: &Plane,
) -> Result<Mat3, GeometryError> {
    if plane.offset == 0.0 {
        return Err(GeometryError::ZeroOffsetPlane);
    }
    let inner = t.rotation - t.translation * plane.normal.transpose() / plane.offset;
    Ok(k.matrix() * inner * k.inverse_matrix())
}

/// Applies a homography to a pixel, dehomogenizing the result.
pub fn apply_homography(h: &Mat3, px: &Pixel) -> Pixel {
    let q = h * px.homogeneous();
    Pixel { u: q.x / q.z, v: q.y / q.z }
}

/// Mean of a point set. Panics on an empty slice.
pub fn centroid(points: &[Vec3]) -> Vec3 {
    assert!(!points.is_empty(), "centroid of empty point set");
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Serde adapter writing a `Vec3` as `[x, y, z]`.
pub mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

/// Serde adapter writing a `Vec<Vec3>` as a list of `[x, y, z]`.
pub mod vec3_list_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec3], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 3]> = v.iter().map(|p| [p.x, p.y, p.z]).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec3>, D::Error> {
        let rows = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(rows.into_iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    fn k600() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn project_examples() {
        let k = unit_k();
        assert_eq!(project(&k, &Vec3::new(0.0, 0.0, 2.0)).unwrap(), Pixel::new(0.0, 0.0));
        assert_eq!(project(&k, &Vec3::new(1.0, 0.0, 2.0)).unwrap(), Pixel::new(0.5, 0.0));
        assert!(matches!(
            project(&k, &Vec3::new(1.0, 0.0, 0.0)),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(project(&k, &Vec3::new(1.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn backproject_examples() {
        let k = unit_k();
        assert_eq!(backproject_ray(&k, &Pixel::new(0.0, 0.0)), Vec3::new(0.0, 0.0, 1.0));
        let r = backproject_ray(&k, &Pixel::new(1.0, 1.0));
        let s = 1.0 / 3f64.sqrt();
        assert_relative_eq!(r, Vec3::new(s, s, s), epsilon = 1e-15);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(f64::NAN, 1.0, 0.0, 0.0).is_err());
        let k = k600();
        assert_relative_eq!(k.matrix() * k.inverse_matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn ray_plane_examples() {
        let plane = Plane::new(Vec3::new(0.0, 0.0, -1.0), 2.0).unwrap();
        let hit = intersect_ray_plane(&Vec3::zeros(), &Vec3::z(), &plane).unwrap();
        assert_eq!(hit, Vec3::new(0.0, 0.0, 2.0));
        assert!(matches!(
            intersect_ray_plane(&Vec3::zeros(), &Vec3::x(), &plane),
            Err(GeometryError::RayParallelToPlane(_))
        ));
        assert!(matches!(
            intersect_ray_plane(&Vec3::zeros(), &-Vec3::z(), &plane),
            Err(GeometryError::IntersectionBehindCamera(_))
        ));
    }

    #[test]
    fn homography_identity_and_pure_rotation() {
        let k = k600();
        let plane = Plane::new(Vec3::new(0.1, -0.2, -1.0), 1.5).unwrap();
        let h = plane_homography(&k, &RigidTransform::identity(), &plane).unwrap();
        assert_relative_eq!(h, Mat3::identity(), epsilon = 1e-12);

        let rot = RigidTransform::from_axis_angle(Vec3::new(0.05, -0.1, 0.02), Vec3::zeros());
        let h = plane_homography(&k, &rot, &plane).unwrap();
        assert_relative_eq!(h, k.matrix() * rot.rotation * k.inverse_matrix(), epsilon = 1e-12);

        let zero = Plane { normal: Vec3::z(), offset: 0.0 };
        assert_eq!(plane_homography(&k, &rot, &zero), Err(GeometryError::ZeroOffsetPlane));
    }

    #[test]
    fn transform_validation() {
        assert!(RigidTransform::new(Mat3::identity() * 2.0, Vec3::zeros()).is_err());
        let reflect = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
    }

    #[test]
    fn transform_json_is_row_major() {
        let t = RigidTransform {
            rotation: Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            translation: Vec3::new(1.0, 2.0, 3.0),
        };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"R":[[0.0,-1.0,0.0],[1.0,0.0,0.0],[0.0,0.0,1.0]],"c":[1.0,2.0,3.0]}"#);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn transform_plane_keeps_points_on_plane() {
        let t = RigidTransform::from_axis_angle(Vec3::new(0.3, 0.1, -0.2), Vec3::new(0.5, -1.0, 2.0));
        let plane = Plane::new(Vec3::new(1.0, 2.0, -0.5), 0.7).unwrap();
        let p = Vec3::new(0.2, 0.1, 0.0);
        let p = p - plane.normal * plane.signed_distance(&p);
        let moved = t.transform_plane(&plane);
        assert!(moved.signed_distance(&t.apply(&p)).abs() < 1e-12);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-5.0..5.0f64)).prop_map(
            |(w, c)| RigidTransform::from_axis_angle(Vec3::from(w), Vec3::from(c)),
        )
    }

    proptest! {
        #[test]
        fn project_backproject_round_trip(u in 0.0..640.0f64, v in 0.0..480.0f64, lambda in 0.01..100.0f64) {
            let k = k600();
            let px = Pixel::new(u, v);
            let back = project(&k, &(backproject_ray(&k, &px) * lambda)).unwrap();
            prop_assert!(back.distance(&px) < 1e-9);
        }

        #[test]
        fn backproject_project_round_trip(x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.1..10.0f64) {
            let k = k600();
            let p = Vec3::new(x, y, z);
            let ray = backproject_ray(&k, &project(&k, &p).unwrap());
            prop_assert!((ray - p.normalize()).norm() < 1e-12);
        }

        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform()) {
            for id in [t.compose(&t.inverse()), t.inverse().compose(&t)] {
                prop_assert!((id.rotation - Mat3::identity()).abs().max() < 1e-12);
                prop_assert!(id.translation.abs().max() < 1e-12);
            }
        }

        #[test]
        fn intersection_satisfies_plane(
            n in prop::array::uniform3(-1.0..1.0f64),
            d in -5.0..5.0f64,
            o in prop::array::uniform3(-1.0..1.0f64),
            dir in prop::array::uniform3(-1.0..1.0f64),
        ) {
            let n = Vec3::from(n);
            let dir = Vec3::from(dir);
            prop_assume!(n.norm() > 0.1 && dir.norm() > 0.1);
            let plane = Plane::new(n, d).unwrap();
            let dir = dir.normalize();
            if let Ok(x) = intersect_ray_plane(&Vec3::from(o), &dir, &plane) {
                prop_assert!(plane.signed_distance(&x).abs() < 1e-12 * (1.0 + x.norm()));
            }
        }
    }

    /// Direct transform-then-project as the oracle for the plane homography.
    #[test]
    fn homography_matches_explicit_projection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let k = k600();
        for _ in 0..50 {
            let t = RigidTransform::from_axis_angle(
                Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
                Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)),
            );
            let plane = Plane::new(
                Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -1.0),
                rng.random_range(1.0..4.0),
            )
            .unwrap();
            let h = plane_homography(&k, &t, &plane).unwrap();
            for _ in 0..20 {
                let px = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                let x1 = intersect_ray_plane(&Vec3::zeros(), &backproject_ray(&k, &px), &plane).unwrap();
                let direct = project(&k, &t.apply(&x1)).unwrap();
                assert!(apply_homography(&h, &px).distance(&direct) < 1e-9);
            }
        }
    }
}
