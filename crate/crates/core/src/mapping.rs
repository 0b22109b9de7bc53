//! Stalk localization and semantic map assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{backproject_ray, intersect_ray_plane, CameraIntrinsics, GeometryError, Plane, RigidTransform, Vec3};
use crate::tracking::{BBox, TrackedBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("map is empty: no landmark survived finalization")]
    EmptyMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalkObservation {
    pub track_id: u64,
    pub frame: usize,
    pub world_point: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalkLandmark {
    pub id: u64,
    #[serde(rename = "position_m", with = "crate::geometry::vec3_serde")]
    pub position: Vec3,
    pub support: usize,
    #[serde(default)]
    pub rejected: usize,
    /// Tracks whose observations formed this landmark.
    #[serde(default)]
    pub track_ids: Vec<u64>,
}

/// Stalks plus ground and corn planes (world frame) and the side-camera
/// trajectory (camera -> world, one pose per frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub landmarks: Vec<StalkLandmark>,
    pub ground: Plane,
    pub corn: Plane,
    pub trajectory: Vec<RigidTransform>,
    /// Tracker output per frame, kept for re-projection scoring.
    #[serde(default)]
    pub tracks: Vec<Vec<TrackedBox>>,
}

impl SemanticMap {
    pub fn landmark_for_track(&self, track_id: u64) -> Option<&StalkLandmark> {
        self.landmarks.iter().find(|l| l.track_ids.contains(&track_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinalizeParams {
    pub min_support: usize,
    pub mad_k: f64,
    pub merge_radius: f64,
}

impl Default for FinalizeParams {
    fn default() -> Self {
        Self { min_support: 5, mad_k: 3.0, merge_radius: 0.10 }
    }
}

/// Ray through the box centroid intersected with the corn plane (camera
/// frame), then mapped to world coordinates.
pub fn localize_centroid(
    bbox: &BBox,
    k: &CameraIntrinsics,
    corn_cam: &Plane,
    cam_pose_world: &RigidTransform,
) -> Result<Vec3, GeometryError> {
    let ray = backproject_ray(k, &bbox.center());
    let p = intersect_ray_plane(&Vec3::zeros(), &ray, corn_cam)?;
    Ok(cam_pose_world.apply(&p))
}

#[derive(Debug, Clone, Default)]
pub struct MapBuilder {
    buffers: BTreeMap<u64, Vec<StalkObservation>>,
    ground_planes: Vec<Plane>,
    corn_planes: Vec<Plane>,
    trajectory: Vec<RigidTransform>,
    tracks: Vec<Vec<TrackedBox>>,
}

impl MapBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, obs: StalkObservation) {
        self.buffers.entry(obs.track_id).or_default().push(obs);
    }

    pub fn buffer_len(&self, track_id: u64) -> usize {
        self.buffers.get(&track_id).map_or(0, Vec::len)
    }

    pub fn track_count(&self) -> usize {
        self.buffers.len()
    }

    /// Per-frame plane estimates already expressed in the world frame.
    pub fn record_planes(&mut self, ground_world: Plane, corn_world: Plane) {
        self.ground_planes.push(ground_world);
        self.corn_planes.push(corn_world);
    }

    pub fn set_trajectory(&mut self, trajectory: Vec<RigidTransform>) {
        self.trajectory = trajectory;
    }

    pub fn set_tracks(&mut self, tracks: Vec<Vec<TrackedBox>>) {
        self.tracks = tracks;
    }

    pub fn finalize(&self, params: &FinalizeParams) -> Result<SemanticMap, MappingError> {
        let mut landmarks: Vec<StalkLandmark> = self
            .buffers
            .iter()
            .filter_map(|(&id, obs)| gate_track(id, obs, params))
            .collect();
        if landmarks.is_empty() {
            return Err(MappingError::EmptyMap);
        }
        merge_close(&mut landmarks, params.merge_radius);
        Ok(SemanticMap {
            landmarks,
            ground: median_plane(&self.ground_planes).unwrap_or(Plane { normal: Vec3::z(), offset: 0.0 }),
            corn: median_plane(&self.corn_planes).unwrap_or(Plane { normal: -Vec3::y(), offset: 0.0 }),
            trajectory: self.trajectory.clone(),
            tracks: self.tracks.clone(),
        })
    }
}

/// MAD gate around the component-wise median; `None` when too few
/// observations survive.
fn gate_track(id: u64, obs: &[StalkObservation], params: &FinalizeParams) -> Option<StalkLandmark> {
    let mut pts: Vec<(usize, Vec3)> = obs.iter().map(|o| (o.frame, o.world_point)).collect();
    pts.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
            .then(a.1.z.total_cmp(&b.1.z))
    });
    let points: Vec<Vec3> = pts.into_iter().map(|(_, p)| p).collect();
    let (center, radius) = mad_gate(&points, params.mad_k)?;
    let kept: Vec<Vec3> = points.iter().copied().filter(|p| (p - center).norm() <= radius).collect();
    if kept.len() < params.min_support.max(1) {
        return None;
    }
    let position = kept.iter().fold(Vec3::zeros(), |a, p| a + p) / kept.len() as f64;
    Some(StalkLandmark {
        id,
        position,
        support: kept.len(),
        rejected: points.len() - kept.len(),
        track_ids: vec![id],
    })
}

/// Component-wise median and `mad_k * MAD` of distances to it.
pub fn mad_gate(points: &[Vec3], mad_k: f64) -> Option<(Vec3, f64)> {
    if points.is_empty() {
        return None;
    }
    let center = Vec3::new(
        median(points.iter().map(|p| p.x).collect()),
        median(points.iter().map(|p| p.y).collect()),
        median(points.iter().map(|p| p.z).collect()),
    );
    let mad = median(points.iter().map(|p| (p - center).norm()).collect());
    Some((center, mad_k * mad))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn merge_close(landmarks: &mut Vec<StalkLandmark>, radius: f64) {
    landmarks.sort_by_key(|l| l.id);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..landmarks.len() {
            for j in i + 1..landmarks.len() {
                let d = (landmarks[i].position - landmarks[j].position).norm();
                if d < radius && best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let b = landmarks.remove(j);
        let a = &mut landmarks[i];
        let (wa, wb) = (a.support as f64, b.support as f64);
        a.position = (a.position * wa + b.position * wb) / (wa + wb);
        a.support += b.support;
        a.rejected += b.rejected;
        a.track_ids.extend(b.track_ids);
        a.track_ids.sort_unstable();
    }
}

fn median_plane(planes: &[Plane]) -> Option<Plane> {
    if planes.is_empty() {
        return None;
    }
    let n = Vec3::new(
        median(planes.iter().map(|p| p.normal.x).collect()),
        median(planes.iter().map(|p| p.normal.y).collect()),
        median(planes.iter().map(|p| p.normal.z).collect()),
    );
    let d = median(planes.iter().map(|p| p.offset).collect());
    Plane::new(n, d).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn obs(track_id: u64, frame: usize, p: Vec3) -> StalkObservation {
        StalkObservation { track_id, frame, world_point: p }
    }

    #[test]
    fn localize_axis_case() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let plane = Plane::new(Vec3::new(0.0, 0.0, -1.0), 0.35).unwrap();
        let b = BBox::new(-1.0, -2.0, 1.0, 2.0);
        let p = localize_centroid(&b, &k, &plane, &RigidTransform::identity()).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 0.35)).norm() < 1e-15);

        let parallel = Plane::new(Vec3::x(), 1.0).unwrap();
        assert!(matches!(
            localize_centroid(&b, &k, &parallel, &RigidTransform::identity()),
            Err(GeometryError::RayParallelToPlane(_))
        ));
    }

    #[test]
    fn accumulate_bookkeeping() {
        let mut mb = MapBuilder::new();
        mb.accumulate(obs(1, 0, Vec3::zeros()));
        assert_eq!(mb.buffer_len(1), 1);
        for f in 1..7 {
            mb.accumulate(obs(1, f, Vec3::zeros()));
            mb.accumulate(obs(2, f, Vec3::x()));
        }
        assert_eq!(mb.buffer_len(1), 7);
        assert_eq!(mb.buffer_len(2), 6);
        assert_eq!(mb.buffer_len(3), 0);
    }

    #[test]
    fn constant_observations() {
        let mut mb = MapBuilder::new();
        let p = Vec3::new(1.0, 0.35, 0.3);
        for f in 0..10 {
            mb.accumulate(obs(4, f, p));
        }
        let map = mb.finalize(&FinalizeParams::default()).unwrap();
        assert_eq!(map.landmarks.len(), 1);
        assert!((map.landmarks[0].position - p).norm() < 1e-15);
        assert_eq!(map.landmarks[0].support, 10);
    }

    #[test]
    fn far_outlier_is_gated() {
        let mut mb = MapBuilder::new();
        let cluster: Vec<Vec3> = (0..9)
            .map(|i| Vec3::new(1.0 + 0.001 * (i % 3) as f64, 0.35 + 0.001 * (i / 3) as f64, 0.3))
            .collect();
        for (f, p) in cluster.iter().enumerate() {
            mb.accumulate(obs(1, f, *p));
        }
        mb.accumulate(obs(1, 9, Vec3::new(3.0, 1.0, 0.3)));
        let map = mb.finalize(&FinalizeParams::default()).unwrap();
        let mean = cluster.iter().fold(Vec3::zeros(), |a, p| a + p) / 9.0;
        assert!((map.landmarks[0].position - mean).norm() < 1e-12);
        assert_eq!(map.landmarks[0].support, 9);
        assert_eq!(map.landmarks[0].rejected, 1);
    }

    #[test]
    fn low_support_tracks_dropped_and_empty_map_errors() {
        let mut mb = MapBuilder::new();
        for f in 0..3 {
            mb.accumulate(obs(1, f, Vec3::zeros()));
        }
        assert_eq!(mb.finalize(&FinalizeParams::default()), Err(MappingError::EmptyMap));
        assert_eq!(MapBuilder::new().finalize(&FinalizeParams::default()), Err(MappingError::EmptyMap));
    }

    #[test]
    fn nearby_fragments_merge() {
        let mut mb = MapBuilder::new();
        for f in 0..6 {
            mb.accumulate(obs(7, f, Vec3::new(1.0, 0.0, 0.0)));
            mb.accumulate(obs(3, f + 10, Vec3::new(1.05, 0.0, 0.0)));
            mb.accumulate(obs(9, f, Vec3::new(2.0, 0.0, 0.0)));
        }
        mb.accumulate(obs(3, 30, Vec3::new(1.05, 0.0, 0.0)));
        let map = mb.finalize(&FinalizeParams::default()).unwrap();
        assert_eq!(map.landmarks.len(), 2);
        let merged = &map.landmarks[0];
        assert_eq!(merged.id, 3);
        assert_eq!(merged.track_ids, vec![3, 7]);
        assert_eq!(merged.support, 13);
        assert!((merged.position.x - (1.05 * 7.0 + 6.0) / 13.0).abs() < 1e-12);
        assert!(map.landmark_for_track(9).is_some());
    }

    #[test]
    fn map_json_shape() {
        let mut mb = MapBuilder::new();
        for f in 0..5 {
            mb.accumulate(obs(1, f, Vec3::new(0.5, 0.35, 0.3)));
        }
        mb.record_planes(Plane { normal: Vec3::z(), offset: 0.0 }, Plane { normal: -Vec3::y(), offset: 0.35 });
        mb.set_trajectory(vec![RigidTransform::identity()]);
        let map = mb.finalize(&FinalizeParams::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&map).unwrap();
        assert_eq!(v["landmarks"][0]["position_m"], serde_json::json!([0.5, 0.35, 0.3]));
        assert_eq!(v["landmarks"][0]["support"], 5);
        assert_eq!(v["corn"]["d"], 0.35);
        assert_eq!(v["trajectory"][0]["R"][1], serde_json::json!([0.0, 1.0, 0.0]));
        let back: SemanticMap = serde_json::from_value(v).unwrap();
        assert_eq!(back, map);
    }

    fn scattered(seed: u64) -> Vec<StalkObservation> {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for t in 0..6u64 {
            let base = Vec3::new(t as f64 * 0.2, 0.35, 0.3);
            for f in 0..12 {
                let jitter = Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0);
                let p = if f == 11 { base + Vec3::new(0.3, 0.0, 0.0) } else { base + jitter };
                out.push(obs(t, f, p));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn finalize_is_permutation_invariant(seed in 0u64..1000, shuffle in 0u64..1000) {
            let observations = scattered(seed);
            let mut shuffled = observations.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
            let build = |o: &[StalkObservation]| {
                let mut mb = MapBuilder::new();
                o.iter().for_each(|x| mb.accumulate(*x));
                mb.finalize(&FinalizeParams::default()).unwrap()
            };
            prop_assert_eq!(build(&observations), build(&shuffled));
        }

        #[test]
        fn landmark_within_gate_of_median(seed in 0u64..1000) {
            let observations = scattered(seed);
            let mut mb = MapBuilder::new();
            observations.iter().for_each(|x| mb.accumulate(*x));
            let params = FinalizeParams { merge_radius: 0.0, ..Default::default() };
            let map = mb.finalize(&params).unwrap();
            prop_assert!(map.landmarks.len() <= 6);
            for l in &map.landmarks {
                let pts: Vec<Vec3> = observations.iter().filter(|o| o.track_id == l.id).map(|o| o.world_point).collect();
                let (center, radius) = mad_gate(&pts, params.mad_k).unwrap();
                prop_assert!((l.position - center).norm() <= radius + 1e-12);
            }
        }
    }
}
