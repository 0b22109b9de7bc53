use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{stream, NoiseSpec, SimSpec, Simulation, SmoothNoise, STREAM_FRAME_BASE, STREAM_PROCESSES};
use crate::geometry::{project, CameraIntrinsics, Pixel, Plane, RigidTransform, Vec2, Vec3};
use crate::plane_estimation::FeatureMatch;
use crate::tracking::{BBox, Detection};

/// Frame in which odometry steps are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OdometryFrame {
    #[default]
    Side,
    /// Back camera; the consumer maps steps to the side camera with the
    /// rig extrinsics.
    Back,
}

/// Vanishing point of the row direction in the front image, plus the
/// image slopes `du/dv` of the two corn lines (near row, far row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpObservation {
    pub vp: Pixel,
    pub slope_near: f64,
    pub slope_far: f64,
}

/// Optical flow measured at one pixel of the previous side frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub at: Pixel,
    #[serde(with = "vec2_serde")]
    pub displacement: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    /// Side camera -> world.
    pub side_pose_world: RigidTransform,
    pub corn_plane_cam: Plane,
    /// Ground plane in the front camera frame.
    pub ground_plane_cam: Plane,
    pub corn_plane_front: Plane,
    /// True stalk index per detection; `None` for false positives.
    pub stalk_ids: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBundle {
    pub frame: usize,
    /// Step from the previous frame to this one (identity at frame 0).
    pub odometry: RigidTransform,
    /// Odometry of the front- and side-view noise profiles.
    pub odometry_front: RigidTransform,
    pub odometry_side: RigidTransform,
    pub detections: Vec<Detection>,
    /// Side-camera matches from the previous frame to this one.
    pub matches: Vec<FeatureMatch>,
    pub flow: Vec<FlowSample>,
    /// Labeled ground samples in the front camera frame.
    #[serde(with = "crate::geometry::vec3_list_serde")]
    pub ground_points: Vec<Vec3>,
    /// Side-view depth samples in the side camera frame.
    #[serde(with = "crate::geometry::vec3_list_serde")]
    pub side_points: Vec<Vec3>,
    pub vp_obs: Option<VpObservation>,
    pub truth: FrameTruth,
}

mod vec2_serde {
    use crate::geometry::Vec2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec2, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec2, D::Error> {
        let a = <[f64; 2]>::deserialize(d)?;
        Ok(Vec2::new(a[0], a[1]))
    }
}

/// Slowly varying sensor biases shared across frames.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BiasProcesses {
    vp_u: SmoothNoise,
    vp_v: SmoothNoise,
    slope_near: SmoothNoise,
    slope_far: SmoothNoise,
    side_range: SmoothNoise,
}

impl BiasProcesses {
    pub(crate) fn new(noise: &NoiseSpec, seed: u64) -> Self {
        let mut rng = stream(seed, STREAM_PROCESSES);
        let l = noise.correlation_frames;
        Self {
            vp_u: SmoothNoise::new(&mut rng, noise.vp_sigma, l),
            vp_v: SmoothNoise::new(&mut rng, noise.vp_sigma, l),
            slope_near: SmoothNoise::new(&mut rng, noise.vp_sigma / 100.0, l),
            slope_far: SmoothNoise::new(&mut rng, noise.vp_sigma / 100.0, l),
            side_range: SmoothNoise::new(&mut rng, noise.side_depth_bias_sigma, l),
        }
    }
}

enum Sensor {
    Odometry,
    Detections,
    Matches,
    Ground,
    Flow,
    SidePoints,
}

fn sensor_rng(seed: u64, frame: usize, sensor: Sensor) -> ChaCha8Rng {
    stream(seed, STREAM_FRAME_BASE + 8 * frame as u64 + sensor as u64)
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

fn in_image(spec: &SimSpec, px: &Pixel) -> bool {
    px.u >= 0.0 && px.u <= spec.rig.image_width && px.v >= 0.0 && px.v <= spec.rig.image_height
}

/// Projection that also requires the pixel to fall inside the image.
fn visible(spec: &SimSpec, k: &CameraIntrinsics, p: &Vec3) -> Option<Pixel> {
    project(k, p).ok().filter(|px| in_image(spec, px))
}

/// Scales a camera-frame point along its ray so its depth changes by `dz`.
fn perturb_depth(p: &Vec3, dz: f64) -> Vec3 {
    p * (1.0 + dz / p.z)
}

struct FrameGeometry {
    /// world -> side camera, this frame and the previous one.
    side: RigidTransform,
    side_prev: RigidTransform,
    /// world -> front camera.
    front: RigidTransform,
    cam_x: f64,
}

impl FrameGeometry {
    fn new(sim: &Simulation, i: usize) -> Self {
        let side = sim.truth.trajectory[i].inverse();
        let side_prev = sim.truth.trajectory[i.saturating_sub(1)].inverse();
        let front = sim.spec.rig.front.extrinsics.compose(&sim.rig_poses[i].inverse());
        Self { side, side_prev, front, cam_x: sim.truth.trajectory[i].translation.x }
    }
}

pub(crate) fn render(sim: &Simulation, i: usize) -> FrameBundle {
    let g = FrameGeometry::new(sim, i);
    let (detections, stalk_ids) = detections(sim, i, &g);
    let [odometry, odometry_front, odometry_side] = odometry(sim, i, &g);
    FrameBundle {
        frame: i,
        odometry,
        odometry_front,
        odometry_side,
        detections,
        matches: if i == 0 { Vec::new() } else { matches(sim, i, &g) },
        flow: if i == 0 { Vec::new() } else { flow(sim, i, &g) },
        ground_points: ground_points(sim, i, &g),
        side_points: side_points(sim, i, &g),
        vp_obs: vp_observation(sim, i, &g),
        truth: FrameTruth {
            side_pose_world: sim.truth.trajectory[i],
            corn_plane_cam: g.side.transform_plane(&sim.truth.corn),
            ground_plane_cam: g.front.transform_plane(&sim.truth.ground),
            corn_plane_front: g.front.transform_plane(&sim.truth.corn),
            stalk_ids,
        },
    }
}

fn odometry(sim: &Simulation, i: usize, g: &FrameGeometry) -> [RigidTransform; 3] {
    if i == 0 {
        return [RigidTransform::identity(); 3];
    }
    let truth = g.side.compose(&g.side_prev.inverse());
    let n = &sim.spec.noise;
    let mut rng = sensor_rng(sim.seed, i, Sensor::Odometry);
    let mut noisy = |factor: f64| {
        let rot = gaussian(n.odom_rot_sigma * factor);
        let trans = gaussian(n.odom_trans_sigma * factor);
        let mut draw = |d: &Normal<f64>| Vec3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
        let aa = draw(&rot);
        let t = draw(&trans);
        let step = if aa == Vec3::zeros() && t == Vec3::zeros() {
            truth
        } else {
            RigidTransform::from_axis_angle(aa, t).compose(&truth)
        };
        to_odometry_frame(&sim.spec, &step)
    };
    [noisy(1.0), noisy(n.front_odom_factor), noisy(n.side_odom_factor)]
}

fn to_odometry_frame(spec: &SimSpec, side_step: &RigidTransform) -> RigidTransform {
    match spec.sensors.odometry_frame {
        OdometryFrame::Side => *side_step,
        OdometryFrame::Back => {
            // side <- back
            let m = spec.rig.side.extrinsics.compose(&spec.rig.back.extrinsics.inverse());
            m.inverse().compose(side_step).compose(&m)
        }
    }
}

/// Noise-free side-camera box of stalk `j`, if it lies fully in the image.
pub(crate) fn stalk_box(spec: &SimSpec, world_to_cam: &RigidTransform, stalk: &Vec3) -> Option<BBox> {
    let k = &spec.rig.side.intrinsics;
    let h = spec.field.stalk_height;
    let base = world_to_cam.apply(&Vec3::new(stalk.x, stalk.y, 0.0));
    let top = world_to_cam.apply(&Vec3::new(stalk.x, stalk.y, h));
    if !(base.z > 0.05 && top.z > 0.05) {
        return None;
    }
    let (a, b) = (project(k, &base).ok()?, project(k, &top).ok()?);
    let mid_z = 0.5 * (base.z + top.z);
    let half_w = k.fx * spec.field.stalk_width / 2.0 / mid_z;
    let bbox = BBox::new(a.u.min(b.u) - half_w, a.v.min(b.v), a.u.max(b.u) + half_w, a.v.max(b.v));
    let (w, hgt) = (spec.rig.image_width, spec.rig.image_height);
    (bbox.x_min >= 0.0 && bbox.x_max <= w && bbox.y_min >= 0.0 && bbox.y_max <= hgt).then_some(bbox)
}

fn detections(sim: &Simulation, i: usize, g: &FrameGeometry) -> (Vec<Detection>, Vec<Option<usize>>) {
    let spec = &sim.spec;
    let n = &spec.noise;
    let mut rng = sensor_rng(sim.seed, i, Sensor::Detections);
    let px = gaussian(n.pixel_sigma);
    let mut dets = Vec::new();
    let mut ids = Vec::new();
    for (j, stalk) in sim.truth.stalk_positions_world.iter().enumerate() {
        let Some(b) = stalk_box(spec, &g.side, stalk) else { continue };
        if rng.random::<f64>() < n.detect_dropout {
            continue;
        }
        let mut b = b;
        if n.pixel_sigma > 0.0 {
            b.x_min += px.sample(&mut rng);
            b.y_min += px.sample(&mut rng);
            b.x_max += px.sample(&mut rng);
            b.y_max += px.sample(&mut rng);
        }
        dets.push(Detection { bbox: b, score: 1.0, frame: i });
        ids.push(Some(j));
    }
    if n.false_positive_rate > 0.0 {
        let count = Poisson::new(n.false_positive_rate).expect("rate validated").sample(&mut rng) as usize;
        let k = &spec.rig.side.intrinsics;
        let typical_w = k.fx * spec.field.stalk_width / (spec.field.row_width / 2.0);
        let (w, h) = (spec.rig.image_width, spec.rig.image_height);
        for _ in 0..count {
            let bw = typical_w * rng.random_range(0.7..1.3);
            let bh = h * rng.random_range(0.3..0.8);
            let cu = rng.random_range(bw / 2.0..w - bw / 2.0);
            let cv = rng.random_range(bh / 2.0..h - bh / 2.0);
            dets.push(Detection { bbox: BBox::from_center(Pixel::new(cu, cv), bw, bh), score: 0.5, frame: i });
            ids.push(None);
        }
    }
    (dets, ids)
}

/// Depth offset (toward the camera) of leaf clutter in front of the row.
fn leaf_offset(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.05..0.20)
}

fn matches(sim: &Simulation, i: usize, g: &FrameGeometry) -> Vec<FeatureMatch> {
    let spec = &sim.spec;
    let n = &spec.noise;
    let k = &spec.rig.side.intrinsics;
    let mut rng = sensor_rng(sim.seed, i, Sensor::Matches);
    let px = gaussian(n.pixel_sigma);
    let row_y = spec.field.row_width / 2.0;
    let mut out = Vec::new();
    for _ in 0..spec.sensors.match_count * 20 {
        if out.len() == spec.sensors.match_count {
            break;
        }
        let x = g.cam_x + rng.random_range(-0.6..0.6);
        let z = rng.random_range(0.02..spec.field.stalk_height);
        let y = if rng.random::<f64>() < n.match_outlier_rate { row_y - leaf_offset(&mut rng) } else { row_y };
        let p = Vec3::new(x, y, z);
        let (Some(a), Some(b)) = (visible(spec, k, &g.side_prev.apply(&p)), visible(spec, k, &g.side.apply(&p)))
        else {
            continue;
        };
        let mut m = FeatureMatch { px1: a, px2: b };
        if n.pixel_sigma > 0.0 {
            m.px1.u += px.sample(&mut rng);
            m.px1.v += px.sample(&mut rng);
            m.px2.u += px.sample(&mut rng);
            m.px2.v += px.sample(&mut rng);
        }
        out.push(m);
    }
    out
}

fn flow(sim: &Simulation, i: usize, g: &FrameGeometry) -> Vec<FlowSample> {
    let spec = &sim.spec;
    let k = &spec.rig.side.intrinsics;
    let mut rng = sensor_rng(sim.seed, i, Sensor::Flow);
    let noise = gaussian(spec.noise.flow_sigma);
    let mut out = Vec::new();
    for stalk in &sim.truth.stalk_positions_world {
        let (Some(a), Some(b)) = (visible(spec, k, &g.side_prev.apply(stalk)), visible(spec, k, &g.side.apply(stalk)))
        else {
            continue;
        };
        let mut d = Vec2::new(b.u - a.u, b.v - a.v);
        if spec.noise.flow_sigma > 0.0 {
            d += Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        out.push(FlowSample { at: a, displacement: d });
    }
    out
}

fn ground_points(sim: &Simulation, i: usize, g: &FrameGeometry) -> Vec<Vec3> {
    let spec = &sim.spec;
    let s = &spec.sensors;
    let k = &spec.rig.front.intrinsics;
    let mut rng = sensor_rng(sim.seed, i, Sensor::Ground);
    let depth = gaussian(spec.noise.depth_sigma);
    let front_x = g.front.inverse().translation.x;
    let (lo, hi) = (front_x + s.ground_range.0, front_x + s.ground_range.1);
    let half = spec.field.row_width / 2.0;
    let mut out = Vec::new();
    let first = (lo / s.ground_spacing).ceil() as i64;
    let last = (hi / s.ground_spacing).floor() as i64;
    for kx in first..=last {
        let x = kx as f64 * s.ground_spacing;
        let mut j = 0;
        while (j as f64 + 0.5) * s.ground_spacing < half {
            let y = (j as f64 + 0.5) * s.ground_spacing;
            for y in [y, -y] {
                let weed = rng.random::<f64>() < spec.field.weed_outlier_rate;
                let z = if weed { rng.random_range(0.02..0.3) } else { 0.0 };
                let p = g.front.apply(&Vec3::new(x, y, z));
                if visible(spec, k, &p).is_none() {
                    continue;
                }
                let p = if spec.noise.depth_sigma > 0.0 { perturb_depth(&p, depth.sample(&mut rng)) } else { p };
                out.push(p);
            }
            j += 1;
        }
    }
    out
}

fn side_points(sim: &Simulation, i: usize, g: &FrameGeometry) -> Vec<Vec3> {
    let spec = &sim.spec;
    let n = &spec.noise;
    let k = &spec.rig.side.intrinsics;
    let mut rng = sensor_rng(sim.seed, i, Sensor::SidePoints);
    let noise = gaussian(n.side_depth_sigma);
    let bias = sim.processes.side_range.at(i as f64);
    let row_y = spec.field.row_width / 2.0;
    let near: Vec<&Vec3> =
        sim.truth.stalk_positions_world.iter().filter(|p| (p.x - g.cam_x).abs() < 0.6).collect();
    let mut out = Vec::new();
    for _ in 0..spec.sensors.side_point_count * 20 {
        if out.len() == spec.sensors.side_point_count {
            break;
        }
        let z = rng.random_range(0.0..spec.field.stalk_height);
        let p = if rng.random::<f64>() < n.side_clutter_rate {
            Vec3::new(g.cam_x + rng.random_range(-0.6..0.6), row_y - leaf_offset(&mut rng), z)
        } else {
            if near.is_empty() {
                continue;
            }
            let s = near[rng.random_range(0..near.len())];
            let half = spec.field.stalk_width / 2.0;
            Vec3::new(s.x + rng.random_range(-half..=half), row_y, z)
        };
        let p = g.side.apply(&p);
        if visible(spec, k, &p).is_none() {
            continue;
        }
        let dz = bias + if n.side_depth_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        out.push(if dz == 0.0 { p } else { perturb_depth(&p, dz) });
    }
    out
}

fn vp_observation(sim: &Simulation, i: usize, g: &FrameGeometry) -> Option<VpObservation> {
    let spec = &sim.spec;
    let k = &spec.rig.front.intrinsics;
    let dir = g.front.apply_vector(&Vec3::x());
    if !(dir.z > 0.0) {
        return None;
    }
    let vp = Pixel::new(k.fx * dir.x / dir.z + k.cx, k.fy * dir.y / dir.z + k.cy);
    let front_x = g.front.inverse().translation.x;
    let half = spec.field.row_width / 2.0;
    let slope = |y: f64| -> Option<f64> {
        let q = project(k, &g.front.apply(&Vec3::new(front_x + 1.0, y, 0.0))).ok()?;
        Some((q.u - vp.u) / (q.v - vp.v))
    };
    let (near, far) = (slope(half)?, slope(-half)?);
    let p = &sim.processes;
    let t = i as f64;
    Some(VpObservation {
        vp: Pixel::new(vp.u + p.vp_u.at(t), vp.v + p.vp_v.at(t)),
        slope_near: near + p.slope_near.at(t),
        slope_far: far + p.slope_far.at(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::plane_homography;
    use crate::geometry::apply_homography;

    fn clean(seed: u64) -> Simulation {
        Simulation::new(SimSpec::noise_free(), seed).unwrap()
    }

    #[test]
    fn out_of_range_frame() {
        let sim = clean(1);
        let n = sim.frame_count();
        assert!(matches!(sim.render_frame(n), Err(crate::simulator::SimError::IndexOutOfRange { .. })));
    }

    #[test]
    fn noise_free_matches_follow_the_plane_homography() {
        let sim = clean(2);
        let k = sim.spec.rig.side.intrinsics;
        let prev = sim.render_frame(40).unwrap();
        let f = sim.render_frame(41).unwrap();
        assert!(!f.matches.is_empty());
        let h = plane_homography(&k, &f.odometry, &prev.truth.corn_plane_cam).unwrap();
        for m in &f.matches {
            assert!(apply_homography(&h, &m.px1).distance(&m.px2) < 1e-9);
        }
    }

    #[test]
    fn full_dropout_removes_detections() {
        let mut spec = SimSpec::noise_free();
        spec.noise.detect_dropout = 1.0;
        let sim = Simulation::new(spec, 3).unwrap();
        for i in (0..sim.frame_count()).step_by(17) {
            assert!(sim.render_frame(i).unwrap().detections.is_empty());
        }
    }

    #[test]
    fn hand_computed_box_center() {
        // Straight drive, camera at x = 0.5 (frame 50), stalk at x = 0.6:
        // 0.1 m right of the optical axis at depth 0.35, centre 0 m above
        // the camera height of 0.3 m.
        let mut spec = SimSpec::noise_free();
        spec.field.stalk_count = 1;
        let sim = Simulation::new(spec, 4).unwrap();
        let f = sim.render_frame(50).unwrap();
        assert_eq!(f.detections.len(), 1);
        let c = f.detections[0].bbox.center();
        let expected_u = 320.0 + 230.0 * 0.1 / 0.35;
        let expected_v = 240.0;
        assert!((c.u - expected_u).abs() < 1e-9, "{} vs {}", c.u, expected_u);
        assert!((c.v - expected_v).abs() < 1e-9);
        assert_eq!(f.truth.stalk_ids, vec![Some(0)]);
    }

    #[test]
    fn truth_planes_contain_the_geometry() {
        let sim = Simulation::new(SimSpec::default(), 5).unwrap();
        let f = sim.render_frame(77).unwrap();
        let world_to_side = f.truth.side_pose_world.inverse();
        for s in &sim.truth.stalk_positions_world {
            assert!(f.truth.corn_plane_cam.signed_distance(&world_to_side.apply(s)).abs() < 1e-12);
        }
        assert!(f.truth.corn_plane_cam.offset > 0.0);
        assert_eq!(f.truth.stalk_ids.len(), f.detections.len());
    }

    #[test]
    fn back_frame_odometry_maps_to_side_step() {
        let mut spec = SimSpec::noise_free();
        spec.sensors.odometry_frame = OdometryFrame::Back;
        let sim = Simulation::new(spec, 6).unwrap();
        let f = sim.render_frame(10).unwrap();
        let m = spec.rig.side.extrinsics.compose(&spec.rig.back.extrinsics.inverse());
        let side = m.compose(&f.odometry).compose(&m.inverse());
        let truth = sim.truth.trajectory[10].inverse().compose(&sim.truth.trajectory[9]);
        assert!((side.translation - truth.translation).norm() < 1e-12);
        assert!((side.rotation - truth.rotation).abs().max() < 1e-12);
    }

    #[test]
    fn frames_are_independent_of_render_order() {
        let sim = Simulation::new(SimSpec::default(), 8).unwrap();
        let a = sim.render_frame(12).unwrap();
        let _ = sim.render_frame(3).unwrap();
        assert_eq!(sim.render_frame(12).unwrap(), a);
        assert_eq!(sim.render_all()[12], a);
    }
}
