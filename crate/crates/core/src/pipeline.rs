//! Per-frame mapping pipeline over an observation log.
//!
//! For every frame: fit the ground plane in the front cloud, take the row
//! direction from PCA of the ground inliers, build the corn plane normal,
//! move it to the side camera, estimate the plane distance with the
//! configured source, integrate odometry, track side-view detections and
//! localize each tracked box on the corn plane.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pixel, Plane, RigidTransform, Vec2, Vec3};
use crate::mapping::{localize_centroid, FinalizeParams, MapBuilder, MappingError, SemanticMap, StalkObservation};
use crate::plane_estimation::{
    corn_plane_normal, corridor_plane, downsample_uniform, estimate_plane_distance, pca_axes, ransac_plane_fit,
    sideview_plane_distance, DistanceParams, EstimationError, RansacParams, SideviewParams,
};
use crate::simulator::{FlowSample, FrameBundle, LogHeader, ObservationLog, OdometryFrame};
use crate::tracking::{FlowParams, FlowTracker, SortParams, SortTracker, TrackedBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlaneSource {
    #[default]
    MultiviewSfm,
    Corridor,
    SideviewRansac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    #[default]
    Sort,
    Flow,
}

/// Which odometry stream drives the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OdometryProfile {
    #[default]
    Ground,
    Front,
    Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrackingConfig {
    pub redetect_every: usize,
    /// A live box follows the nearest flow sample within this radius.
    pub search_radius_px: f64,
}

impl Default for FlowTrackingConfig {
    fn default() -> Self {
        Self { redetect_every: FlowParams::default().redetect_every, search_radius_px: 40.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub plane_source: PlaneSource,
    pub tracker: TrackerKind,
    pub odometry_profile: OdometryProfile,
    pub ground_ransac: RansacParams,
    pub downsample_cell: f64,
    pub distance: DistanceParams,
    pub sideview: SideviewParams,
    /// Rows below the vanishing point at which the corridor baseline reads
    /// its corn-line pixel.
    pub corridor_line_dv: f64,
    pub sort: SortParams,
    pub flow: FlowTrackingConfig,
    pub finalize: FinalizeParams,
    /// Mixed with the frame index to seed every per-frame estimator.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plane_source: PlaneSource::default(),
            tracker: TrackerKind::default(),
            odometry_profile: OdometryProfile::default(),
            ground_ransac: RansacParams::default(),
            downsample_cell: 0.05,
            distance: DistanceParams { inlier_px: 3.0, ..DistanceParams::default() },
            sideview: SideviewParams::default(),
            corridor_line_dv: 100.0,
            sort: SortParams::default(),
            flow: FlowTrackingConfig::default(),
            finalize: FinalizeParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFailure {
    pub frame: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub map: SemanticMap,
    /// Corn plane in the side camera per frame (`None` when dropped).
    pub side_planes: Vec<Option<Plane>>,
    /// Corn plane normal from the ground cloud, front camera frame.
    pub front_normals: Vec<Option<Vec3>>,
    pub failures: Vec<FrameFailure>,
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    let mut z = seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ground plane and corn plane normal in the front camera frame.
fn front_planes(bundle: &FrameBundle, config: &RunConfig, seed: u64) -> Result<(Plane, Vec3), EstimationError> {
    let params = RansacParams { seed, ..config.ground_ransac };
    let fit = ransac_plane_fit(&bundle.ground_points, &params)?;
    let ground = fit.plane.facing(&Vec3::zeros());
    let inliers: Vec<Vec3> = fit.inlier_indices.iter().map(|&i| bundle.ground_points[i]).collect();
    let cloud = downsample_uniform(&inliers, config.downsample_cell);
    let v_l = pca_axes(&cloud)?.largest();
    let n_p = corn_plane_normal(&ground.normal, &v_l)?;
    Ok((ground, n_p))
}

struct Rig {
    side_from_front: RigidTransform,
    /// side <- back, for logs whose odometry is in the back camera frame.
    side_from_back: Option<RigidTransform>,
}

impl Rig {
    fn new(header: &LogHeader) -> Self {
        let rig = &header.specs.rig;
        let side_from_front = rig.side.extrinsics.compose(&rig.front.extrinsics.inverse());
        let side_from_back = (header.specs.sensors.odometry_frame == OdometryFrame::Back)
            .then(|| rig.side.extrinsics.compose(&rig.back.extrinsics.inverse()));
        Self { side_from_front, side_from_back }
    }

    fn side_step(&self, step: &RigidTransform) -> RigidTransform {
        match &self.side_from_back {
            Some(m) => m.compose(step).compose(&m.inverse()),
            None => *step,
        }
    }
}

fn odometry_step(bundle: &FrameBundle, profile: OdometryProfile) -> RigidTransform {
    match profile {
        OdometryProfile::Ground => bundle.odometry,
        OdometryProfile::Front => bundle.odometry_front,
        OdometryProfile::Side => bundle.odometry_side,
    }
}

/// Corn plane in the side camera from the configured distance source.
#[allow(clippy::too_many_arguments)]
fn side_plane(
    log: &ObservationLog,
    i: usize,
    step: &RigidTransform,
    n_side: &Vec3,
    ground_front: &Plane,
    rig: &Rig,
    config: &RunConfig,
    seed: u64,
) -> Result<Plane, String> {
    let specs = &log.header.specs;
    let bundle = &log.frames[i];
    let plane = match config.plane_source {
        PlaneSource::MultiviewSfm => {
            if i == 0 {
                return Err("no previous frame for multi-view distance".into());
            }
            let n_prev = step.rotation.transpose() * n_side;
            let params = DistanceParams { seed, ..config.distance };
            let est = estimate_plane_distance(&bundle.matches, &specs.rig.side.intrinsics, step, &n_prev, &params)
                .map_err(|e| e.to_string())?;
            step.transform_plane(&est.plane)
        }
        PlaneSource::Corridor => {
            let obs = bundle.vp_obs.ok_or("no vanishing point observation")?;
            let dv = config.corridor_line_dv;
            let line_px = Pixel::new(obs.vp.u + obs.slope_near * dv, obs.vp.v + dv);
            let est = corridor_plane(&obs.vp, &line_px, &specs.rig.front.intrinsics, ground_front)
                .map_err(|e| e.to_string())?;
            rig.side_from_front.transform_plane(&est.plane).facing(&Vec3::zeros())
        }
        PlaneSource::SideviewRansac => {
            let params = SideviewParams { seed, ..config.sideview };
            sideview_plane_distance(&bundle.side_points, n_side, &params).map_err(|e| e.to_string())?.plane
        }
    };
    if !(plane.offset > 0.0) || !plane.offset.is_finite() {
        return Err(format!("corn plane offset {} is not in front of the camera", plane.offset));
    }
    Ok(plane)
}

enum Tracker {
    Sort(SortTracker),
    Flow(FlowTracker, f64),
}

impl Tracker {
    fn new(config: &RunConfig) -> Self {
        match config.tracker {
            TrackerKind::Sort => Tracker::Sort(SortTracker::new(config.sort)),
            TrackerKind::Flow => Tracker::Flow(
                FlowTracker::new(FlowParams { redetect_every: config.flow.redetect_every }),
                config.flow.search_radius_px,
            ),
        }
    }

    fn step(&mut self, bundle: &FrameBundle) -> Vec<TrackedBox> {
        match self {
            Tracker::Sort(t) => t.step(&bundle.detections),
            Tracker::Flow(t, radius) => {
                if t.is_redetection_frame() {
                    return t.step(&[], Some(&bundle.detections)).expect("re-detection needs no displacements");
                }
                let lookup = |b: &TrackedBox| nearest_flow(&bundle.flow, &b.bbox.center(), *radius);
                t.retain(|b| lookup(b).is_some());
                let disp: Vec<Vec2> = t.live().iter().map(|b| lookup(b).expect("retained")).collect();
                t.step(&disp, None).expect("one displacement per live box")
            }
        }
    }
}

fn nearest_flow(samples: &[FlowSample], at: &Pixel, radius: f64) -> Option<Vec2> {
    samples
        .iter()
        .map(|s| (s.at.distance(at), s.displacement))
        .filter(|(d, _)| *d <= radius)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| v)
}

/// Integrated side-camera poses (camera -> world) for one odometry stream,
/// starting from the log's anchor.
pub fn integrate_odometry(log: &ObservationLog, profile: OdometryProfile) -> Vec<RigidTransform> {
    let rig = Rig::new(&log.header);
    let mut pose = log.header.anchor;
    let mut poses = Vec::with_capacity(log.frames.len());
    for (i, b) in log.frames.iter().enumerate() {
        if i > 0 {
            pose = pose.compose(&rig.side_step(&odometry_step(b, profile)).inverse());
        }
        poses.push(pose);
    }
    poses
}

pub fn run_pipeline(log: &ObservationLog, config: &RunConfig) -> Result<RunOutput, MappingError> {
    let rig = Rig::new(&log.header);
    let k_side = log.header.specs.rig.side.intrinsics;
    let poses = integrate_odometry(log, config.odometry_profile);
    let mut tracker = Tracker::new(config);
    let mut builder = MapBuilder::new();
    let mut side_planes = Vec::with_capacity(log.frames.len());
    let mut front_normals = Vec::with_capacity(log.frames.len());
    let mut failures = Vec::new();
    let mut tracks = Vec::with_capacity(log.frames.len());

    for (i, bundle) in log.frames.iter().enumerate() {
        let seed = frame_seed(config.seed, i);
        let step = rig.side_step(&odometry_step(bundle, config.odometry_profile));
        let boxes = tracker.step(bundle);

        let planes = front_planes(bundle, config, seed).map_err(|e| e.to_string()).and_then(|(ground, n_front)| {
            let mut n_side = rig.side_from_front.apply_vector(&n_front);
            if n_side.z > 0.0 {
                n_side = -n_side;
            }
            let corn = side_plane(log, i, &step, &n_side, &ground, &rig, config, seed)?;
            Ok((ground, n_front, corn))
        });
        match planes {
            Ok((ground, n_front, corn)) => {
                let pose = &poses[i];
                let front_pose = pose.compose(&rig.side_from_front);
                builder.record_planes(front_pose.transform_plane(&ground), pose.transform_plane(&corn));
                for b in &boxes {
                    match localize_centroid(&b.bbox, &k_side, &corn, pose) {
                        Ok(p) => builder.accumulate(StalkObservation { track_id: b.track_id, frame: i, world_point: p }),
                        Err(e) => log::debug!("frame {i}: track {} not localized: {e}", b.track_id),
                    }
                }
                side_planes.push(Some(corn));
                front_normals.push(Some(n_front));
            }
            Err(reason) => {
                log::debug!("frame {i} dropped: {reason}");
                failures.push(FrameFailure { frame: i, reason });
                side_planes.push(None);
                front_normals.push(None);
            }
        }
        tracks.push(boxes);
    }

    builder.set_trajectory(poses);
    builder.set_tracks(tracks);
    let map = builder.finalize(&config.finalize)?;
    Ok(RunOutput { map, side_planes, front_normals, failures })
}
