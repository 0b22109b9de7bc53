//! Seeded synthetic corn row: stalks on a vertical plane beside a straight
//! path, a rover trajectory with small lateral/yaw wobble, and per-frame
//! sensor streams rendered from the true geometry.
//!
//! World frame: `x` along the row, `z` up, `y` toward the observed corn row.
//! The ground is `z = 0` and the corn row stands on `y = row_width / 2`. The
//! rig frame uses the same axes at the rover's pose, origin on the ground.

mod log;
mod render;
mod scene;

pub use log::{read_log, write_log, LogError, LogHeader, ObservationLog, FORMAT_VERSION};
pub use render::{FlowSample, FrameBundle, FrameTruth, OdometryFrame, VpObservation};
pub use scene::{generate_scene, generate_trajectory, SmoothNoise};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Mat3, Plane, RigidTransform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("frame index {index} out of range (trajectory has {len} poses)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSpec {
    pub stalk_count: usize,
    pub first_stalk_x: f64,
    pub mean_spacing: f64,
    pub spacing_jitter: f64,
    pub row_width: f64,
    pub stalk_height: f64,
    pub stalk_width: f64,
    /// Fraction of ground samples replaced by weed points above the ground.
    pub weed_outlier_rate: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            stalk_count: 12,
            first_stalk_x: 0.6,
            mean_spacing: 0.2,
            spacing_jitter: 0.02,
            row_width: 0.70,
            stalk_height: 0.6,
            stalk_width: 0.03,
            weed_outlier_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub intrinsics: CameraIntrinsics,
    /// camera <- rig.
    pub extrinsics: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub front: CameraSpec,
    pub side: CameraSpec,
    pub back: CameraSpec,
    pub image_width: f64,
    pub image_height: f64,
    pub frame_rate: f64,
}

/// camera <- rig for a camera at `position` (rig frame) whose axes, written
/// in rig coordinates, are the rows of `axes`.
fn mount(axes: Mat3, position: Vec3) -> RigidTransform {
    RigidTransform { rotation: axes, translation: -(axes * position) }
}

impl Default for RigSpec {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let side_k = CameraIntrinsics { fx: 230.0, fy: 230.0, cx: 320.0, cy: 240.0 };
        let front_k = CameraIntrinsics { fx: 320.0, fy: 320.0, cx: 320.0, cy: 240.0 };
        Self {
            front: CameraSpec {
                intrinsics: front_k,
                extrinsics: mount(
                    Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
                    Vec3::new(0.2, 0.0, 0.3),
                ),
            },
            side: CameraSpec {
                intrinsics: side_k,
                extrinsics: mount(
                    Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
                    Vec3::new(0.0, 0.0, 0.3),
                ),
            },
            back: CameraSpec {
                intrinsics: side_k,
                extrinsics: mount(
                    Mat3::new(0.0, 1.0, 0.0, h, 0.0, -h, -h, 0.0, -h),
                    Vec3::new(-0.2, 0.0, 0.35),
                ),
            },
            image_width: 640.0,
            image_height: 480.0,
            frame_rate: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    pub match_outlier_rate: f64,
    /// Ground-cloud depth noise along the viewing ray.
    pub depth_sigma: f64,
    pub detect_dropout: f64,
    /// Mean number of false-positive detections per frame.
    pub false_positive_rate: f64,
    pub odom_rot_sigma: f64,
    pub odom_trans_sigma: f64,
    /// Vanishing point error; slopes get `vp_sigma / 100`.
    pub vp_sigma: f64,
    /// Correlation length (frames) of the vanishing-point and side-depth
    /// bias processes.
    pub correlation_frames: f64,
    /// Optical-flow displacement noise per frame.
    pub flow_sigma: f64,
    pub side_depth_sigma: f64,
    /// Slowly varying range bias of the side depth sensor.
    pub side_depth_bias_sigma: f64,
    pub side_clutter_rate: f64,
    /// Odometry sigma multipliers for the front- and side-view streams.
    pub front_odom_factor: f64,
    pub side_odom_factor: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: 1.0,
            match_outlier_rate: 0.2,
            depth_sigma: 0.005,
            detect_dropout: 0.1,
            false_positive_rate: 0.05,
            odom_rot_sigma: 1e-4,
            odom_trans_sigma: 5e-5,
            vp_sigma: 5.0,
            correlation_frames: 30.0,
            flow_sigma: 0.8,
            side_depth_sigma: 0.01,
            side_depth_bias_sigma: 0.02,
            side_clutter_rate: 0.4,
            front_odom_factor: 20.0,
            side_odom_factor: 30.0,
        }
    }
}

impl NoiseSpec {
    pub fn noise_free() -> Self {
        Self {
            pixel_sigma: 0.0,
            match_outlier_rate: 0.0,
            depth_sigma: 0.0,
            detect_dropout: 0.0,
            false_positive_rate: 0.0,
            odom_rot_sigma: 0.0,
            odom_trans_sigma: 0.0,
            vp_sigma: 0.0,
            flow_sigma: 0.0,
            side_depth_sigma: 0.0,
            side_depth_bias_sigma: 0.0,
            side_clutter_rate: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let rates = [
            ("match_outlier_rate", self.match_outlier_rate),
            ("detect_dropout", self.detect_dropout),
            ("side_clutter_rate", self.side_clutter_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(SimError::InvalidSpec(format!("{name} = {r} not in [0, 1]")));
            }
        }
        let nonneg = [
            ("pixel_sigma", self.pixel_sigma),
            ("depth_sigma", self.depth_sigma),
            ("false_positive_rate", self.false_positive_rate),
            ("odom_rot_sigma", self.odom_rot_sigma),
            ("odom_trans_sigma", self.odom_trans_sigma),
            ("vp_sigma", self.vp_sigma),
            ("flow_sigma", self.flow_sigma),
            ("side_depth_sigma", self.side_depth_sigma),
            ("side_depth_bias_sigma", self.side_depth_bias_sigma),
            ("front_odom_factor", self.front_odom_factor),
            ("side_odom_factor", self.side_odom_factor),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidSpec(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(self.correlation_frames > 0.0) {
            return Err(SimError::InvalidSpec("correlation_frames must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WobbleSpec {
    pub lateral_amplitude: f64,
    pub yaw_amplitude: f64,
    /// Wavelength of the perturbation along the row.
    pub period: f64,
}

impl Default for WobbleSpec {
    fn default() -> Self {
        Self { lateral_amplitude: 0.01, yaw_amplitude: 0.02, period: 1.5 }
    }
}

impl WobbleSpec {
    pub fn none() -> Self {
        Self { lateral_amplitude: 0.0, yaw_amplitude: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub length: f64,
    pub speed: f64,
    pub start_x: f64,
    pub wobble: WobbleSpec,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self { length: 3.6, speed: 0.3, start_x: 0.0, wobble: WobbleSpec::default() }
    }
}

/// Per-frame sample counts of the rendered streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub match_count: usize,
    pub side_point_count: usize,
    /// Ground sample grid pitch (world frame).
    pub ground_spacing: f64,
    /// Ground samples are taken this far ahead of the front camera.
    pub ground_range: (f64, f64),
    pub odometry_frame: OdometryFrame,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            match_count: 150,
            side_point_count: 80,
            ground_spacing: 0.05,
            ground_range: (0.6, 2.6),
            odometry_frame: OdometryFrame::Side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimSpec {
    pub field: FieldSpec,
    pub rig: RigSpec,
    pub noise: NoiseSpec,
    pub trajectory: TrajectorySpec,
    pub sensors: SensorSpec,
}

impl SimSpec {
    /// Noise-free straight drive past the default row.
    pub fn noise_free() -> Self {
        Self {
            noise: NoiseSpec::noise_free(),
            field: FieldSpec { spacing_jitter: 0.0, weed_outlier_rate: 0.0, ..FieldSpec::default() },
            trajectory: TrajectorySpec { wobble: WobbleSpec::none(), ..TrajectorySpec::default() },
            ..Self::default()
        }
    }

    /// 40-stalk row, 300 frames, default noise.
    pub fn desk_scale() -> Self {
        Self {
            field: FieldSpec { stalk_count: 40, ..FieldSpec::default() },
            trajectory: TrajectorySpec { length: 3.0, ..TrajectorySpec::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let f = &self.field;
        if !(f.mean_spacing > 0.0) || !(f.row_width > 0.0) {
            return Err(SimError::InvalidSpec("mean_spacing and row_width must be > 0".into()));
        }
        if !(f.stalk_height > 0.0) || !(f.stalk_width > 0.0) || !(f.spacing_jitter >= 0.0) {
            return Err(SimError::InvalidSpec("stalk dimensions must be > 0 and jitter >= 0".into()));
        }
        if !(0.0..=1.0).contains(&f.weed_outlier_rate) {
            return Err(SimError::InvalidSpec("weed_outlier_rate not in [0, 1]".into()));
        }
        let t = &self.trajectory;
        if !(t.speed > 0.0) || !(t.length >= 0.0) || !(self.rig.frame_rate > 0.0) {
            return Err(SimError::InvalidSpec("speed and frame_rate must be > 0, length >= 0".into()));
        }
        if !(t.wobble.period > 0.0) {
            return Err(SimError::InvalidSpec("wobble period must be > 0".into()));
        }
        if !(self.sensors.ground_spacing > 0.0) {
            return Err(SimError::InvalidSpec("ground_spacing must be > 0".into()));
        }
        for cam in [&self.rig.front, &self.rig.side, &self.rig.back] {
            cam.intrinsics.validate().map_err(|e| SimError::InvalidSpec(e.to_string()))?;
            cam.extrinsics.validate().map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        }
        self.noise.validate()
    }
}

/// Hidden ground truth of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Stalk centres (midpoint of the visible segment), sorted along the row.
    #[serde(with = "crate::geometry::vec3_list_serde")]
    pub stalk_positions_world: Vec<Vec3>,
    pub neighbor_gaps: Vec<f64>,
    pub ground: Plane,
    /// Oriented toward the path.
    pub corn: Plane,
    /// Side-camera poses (camera -> world), one per frame.
    #[serde(default)]
    pub trajectory: Vec<RigidTransform>,
}

/// Independent RNG stream for one purpose of one seeded run.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) const STREAM_SCENE: u64 = 1;
pub(crate) const STREAM_TRAJECTORY: u64 = 2;
pub(crate) const STREAM_PROCESSES: u64 = 3;
pub(crate) const STREAM_FRAME_BASE: u64 = 1 << 32;

/// A fully generated scene and trajectory, ready to render frames.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub spec: SimSpec,
    pub seed: u64,
    pub truth: GroundTruth,
    /// Rig poses (rig -> world).
    pub rig_poses: Vec<RigidTransform>,
    pub(crate) processes: render::BiasProcesses,
}

impl Simulation {
    pub fn new(spec: SimSpec, seed: u64) -> Result<Self, SimError> {
        spec.validate()?;
        let mut truth = generate_scene(&spec.field, seed);
        let rig_poses = generate_trajectory(&spec.trajectory, &spec.rig, seed);
        let side_from_rig = spec.rig.side.extrinsics.inverse();
        truth.trajectory = rig_poses.iter().map(|p| p.compose(&side_from_rig)).collect();
        let processes = render::BiasProcesses::new(&spec.noise, seed);
        Ok(Self { spec, seed, truth, rig_poses, processes })
    }

    pub fn frame_count(&self) -> usize {
        self.rig_poses.len()
    }

    /// Side-camera pose (camera -> world) at frame 0.
    pub fn anchor(&self) -> RigidTransform {
        self.truth.trajectory.first().copied().unwrap_or_default()
    }

    pub fn render_frame(&self, index: usize) -> Result<FrameBundle, SimError> {
        if index >= self.rig_poses.len() {
            return Err(SimError::IndexOutOfRange { index, len: self.rig_poses.len() });
        }
        Ok(render::render(self, index))
    }

    /// Renders every frame (in parallel; each frame has its own RNG stream).
    pub fn render_all(&self) -> Vec<FrameBundle> {
        use rayon::prelude::*;
        (0..self.frame_count()).into_par_iter().map(|i| render::render(self, i)).collect()
    }

    pub fn header(&self, timestamp: Option<u64>) -> LogHeader {
        LogHeader {
            format_version: FORMAT_VERSION,
            specs: self.spec,
            seed: self.seed,
            anchor: self.anchor(),
            generated_unix_s: timestamp,
        }
    }

    pub fn log(&self) -> ObservationLog {
        ObservationLog { header: self.header(None), frames: self.render_all() }
    }
}
