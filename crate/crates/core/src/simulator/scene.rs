use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream, FieldSpec, GroundTruth, RigSpec, TrajectorySpec, STREAM_SCENE, STREAM_TRAJECTORY};
use crate::geometry::{Mat3, Plane, RigidTransform, Vec3};

pub fn generate_scene(field: &FieldSpec, seed: u64) -> GroundTruth {
    let mut rng = stream(seed, STREAM_SCENE);
    let jitter = Normal::new(0.0, field.spacing_jitter).expect("jitter validated");
    let mut xs: Vec<f64> = (0..field.stalk_count)
        .map(|i| field.first_stalk_x + i as f64 * field.mean_spacing + jitter.sample(&mut rng))
        .collect();
    xs.sort_by(f64::total_cmp);
    let y = field.row_width / 2.0;
    let stalk_positions_world = xs.iter().map(|&x| Vec3::new(x, y, field.stalk_height / 2.0)).collect();
    let neighbor_gaps = xs.windows(2).map(|w| w[1] - w[0]).collect();
    GroundTruth {
        stalk_positions_world,
        neighbor_gaps,
        ground: Plane { normal: Vec3::z(), offset: 0.0 },
        corn: Plane { normal: -Vec3::y(), offset: y },
        trajectory: Vec::new(),
    }
}

pub(crate) fn yaw_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rig poses (rig -> world) sampled at the rig's frame rate.
pub fn generate_trajectory(traj: &TrajectorySpec, rig: &RigSpec, seed: u64) -> Vec<RigidTransform> {
    assert!(traj.speed > 0.0, "speed must be positive");
    let mut rng = stream(seed, STREAM_TRAJECTORY);
    let (phase_lat, phase_yaw): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let exact = traj.length / traj.speed * rig.frame_rate;
    let count = (exact - 1e-9 * exact.abs().max(1.0)).ceil().max(0.0) as usize;
    let w = &traj.wobble;
    (0..count)
        .map(|i| {
            let s = i as f64 * traj.speed / rig.frame_rate;
            let arg = TAU * s / w.period;
            let lateral = w.lateral_amplitude * (arg + phase_lat).sin();
            let yaw = w.yaw_amplitude * (arg + phase_yaw).sin();
            RigidTransform { rotation: yaw_rotation(yaw), translation: Vec3::new(traj.start_x + s, lateral, 0.0) }
        })
        .collect()
}

/// Smooth zero-mean random signal with standard deviation `amplitude` and a
/// Gaussian correlation of the given length, built from random cosines so
/// any sample can be evaluated independently.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothNoise {
    amplitude: f64,
    components: Vec<(f64, f64)>,
}

impl SmoothNoise {
    const COMPONENTS: usize = 16;

    pub fn new(rng: &mut impl Rng, amplitude: f64, correlation: f64) -> Self {
        let freq = Normal::new(0.0, 1.0 / correlation).expect("correlation validated");
        let components = (0..Self::COMPONENTS)
            .map(|_| (freq.sample(rng), rng.random_range(0.0..TAU)))
            .collect();
        Self { amplitude, components }
    }

    pub fn at(&self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let sum: f64 = self.components.iter().map(|(w, p)| (w * t + p).cos()).sum();
        self.amplitude * (2.0 / Self::COMPONENTS as f64).sqrt() * sum
    }
}
