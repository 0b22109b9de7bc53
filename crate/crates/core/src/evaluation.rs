//! Map quality metrics: neighbouring-gap error along the row and centroid
//! re-projection error, plus the method comparison table.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, project, CameraIntrinsics, Mat3, Vec3};
use crate::mapping::SemanticMap;
use crate::pipeline::{run_pipeline, OdometryProfile, PlaneSource, RunConfig, TrackerKind};
use crate::simulator::{GroundTruth, LogHeader, ObservationLog, SimError, Simulation};
use crate::tracking::TrackedBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least two matched neighbouring landmarks (found {found})")]
    InsufficientLandmarks { found: usize },
    #[error("no landmark is linked to a tracked box")]
    NoLinkedTracks,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit1D {
    pub point: Vec3,
    pub direction: Vec3,
}

impl LineFit1D {
    pub fn coordinate(&self, p: &Vec3) -> f64 {
        self.direction.dot(&(p - self.point))
    }
}

/// Total-least-squares line; the direction points from the first position
/// toward the last.
pub fn fit_trajectory_line(positions: &[Vec3]) -> Result<LineFit1D, EvalError> {
    if positions.len() < 2 {
        return Err(EvalError::DegenerateInput(format!("{} positions", positions.len())));
    }
    let c = centroid(positions);
    let cov = positions.iter().fold(Mat3::zeros(), |acc, p| {
        let d = p - c;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let (imax, lmax) = eig.eigenvalues.iter().enumerate().fold((0, f64::MIN), |best, (i, &l)| {
        if l > best.1 {
            (i, l)
        } else {
            best
        }
    });
    if !(lmax > 0.0) {
        return Err(EvalError::DegenerateInput("all positions coincide".into()));
    }
    let mut direction: Vec3 = eig.eigenvectors.column(imax).into();
    direction.normalize_mut();
    if direction.dot(&(positions[positions.len() - 1] - positions[0])) < 0.0 {
        direction = -direction;
    }
    Ok(LineFit1D { point: c, direction })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon1 {
    pub value_cm: f64,
    /// Truth stalks with a matched landmark.
    pub matched: usize,
    /// Truth stalks passed by the trajectory without a matched landmark.
    pub unmatched: usize,
    pub pairs: usize,
}

/// For every truth stalk, the closest landmark among those whose nearest
/// truth stalk it is (ties to the lower landmark id).
fn match_landmarks(map: &SemanticMap, truth: &GroundTruth) -> BTreeMap<usize, usize> {
    let mut best: BTreeMap<usize, (f64, u64, usize)> = BTreeMap::new();
    for (li, l) in map.landmarks.iter().enumerate() {
        let nearest = truth
            .stalk_positions_world
            .iter()
            .enumerate()
            .map(|(j, s)| (j, (s - l.position).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((j, d)) = nearest else { continue };
        let candidate = (d, l.id, li);
        let better = match best.get(&j) {
            None => true,
            Some(cur) => d < cur.0 || (d == cur.0 && l.id < cur.1),
        };
        if better {
            best.insert(j, candidate);
        }
    }
    best.into_iter().map(|(j, (_, _, li))| (j, li)).collect()
}

pub fn epsilon1(map: &SemanticMap, truth: &GroundTruth) -> Result<Epsilon1, EvalError> {
    if map.landmarks.len() < 2 {
        return Err(EvalError::InsufficientLandmarks { found: map.landmarks.len() });
    }
    let positions: Vec<Vec3> = map.trajectory.iter().map(|t| t.translation).collect();
    let line = fit_trajectory_line(&positions)?;
    let matched = match_landmarks(map, truth);
    let mut errors = Vec::new();
    for (&j, &li) in &matched {
        let Some(&lj) = matched.get(&(j + 1)) else { continue };
        let pred = line.coordinate(&map.landmarks[lj].position) - line.coordinate(&map.landmarks[li].position);
        let real = line.coordinate(&truth.stalk_positions_world[j + 1])
            - line.coordinate(&truth.stalk_positions_world[j]);
        errors.push((pred - real).abs());
    }
    if errors.is_empty() {
        return Err(EvalError::InsufficientLandmarks { found: matched.len() });
    }
    let span = positions.iter().map(|p| line.coordinate(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| {
        (a.min(t), b.max(t))
    });
    let passed = truth
        .stalk_positions_world
        .iter()
        .enumerate()
        .filter(|(_, s)| (span.0..=span.1).contains(&line.coordinate(s)))
        .filter(|(j, _)| !matched.contains_key(j))
        .count();
    Ok(Epsilon1 {
        value_cm: 100.0 * errors.iter().sum::<f64>() / errors.len() as f64,
        matched: matched.len(),
        unmatched: passed,
        pairs: errors.len(),
    })
}

/// Mean pixel distance between each landmark re-projected with the map
/// trajectory and the centroids of its tracks' boxes.
pub fn epsilon2(map: &SemanticMap, k: &CameraIntrinsics) -> Result<f64, EvalError> {
    let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
    for (li, l) in map.landmarks.iter().enumerate() {
        for &t in &l.track_ids {
            owner.insert(t, li);
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (f, boxes) in map.tracks.iter().enumerate() {
        let Some(pose) = map.trajectory.get(f) else { continue };
        let world_to_cam = pose.inverse();
        for b in boxes {
            let Some(&li) = owner.get(&b.track_id) else { continue };
            let Ok(px) = project(k, &world_to_cam.apply(&map.landmarks[li].position)) else { continue };
            sum += px.distance(&b.bbox.center());
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NoLinkedTracks);
    }
    Ok(sum / count as f64)
}

/// Number of times a true stalk's reported track id changes, counted over
/// boxes updated from a detection of that stalk.
pub fn identity_switches(tracks: &[Vec<TrackedBox>], log: &ObservationLog) -> usize {
    let mut current: BTreeMap<usize, u64> = BTreeMap::new();
    let mut switches = 0;
    for (boxes, frame) in tracks.iter().zip(&log.frames) {
        for b in boxes {
            let Some(stalk) = b.detection.and_then(|d| frame.truth.stalk_ids.get(d).copied().flatten()) else {
                continue;
            };
            if let Some(prev) = current.insert(stalk, b.track_id) {
                if prev != b.track_id {
                    switches += 1;
                }
            }
        }
    }
    switches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub epsilon1_cm: f64,
    pub epsilon2_px: f64,
    pub matched: usize,
    pub unmatched: usize,
}

impl MetricReport {
    pub fn failed(method: &str) -> Self {
        Self { method: method.to_string(), epsilon1_cm: f64::NAN, epsilon2_px: f64::NAN, matched: 0, unmatched: 0 }
    }

    pub fn is_failed(&self) -> bool {
        self.epsilon1_cm.is_nan()
    }
}

pub fn evaluate(map: &SemanticMap, truth: &GroundTruth, k: &CameraIntrinsics, method: &str) -> Result<MetricReport, EvalError> {
    let e1 = epsilon1(map, truth)?;
    let e2 = epsilon2(map, k)?;
    Ok(MetricReport {
        method: method.to_string(),
        epsilon1_cm: e1.value_cm,
        epsilon2_px: e2,
        matched: e1.matched,
        unmatched: e1.unmatched,
    })
}

pub fn write_csv(reports: &[MetricReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "method,epsilon1_cm,epsilon2_px,matched,unmatched")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{}", r.method, r.epsilon1_cm, r.epsilon2_px, r.matched, r.unmatched)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub config: RunConfig,
}

/// The full method and its five single-block substitutions.
pub fn comparison_methods(base: &RunConfig) -> Vec<Method> {
    let ours = RunConfig {
        plane_source: PlaneSource::MultiviewSfm,
        tracker: TrackerKind::Sort,
        odometry_profile: OdometryProfile::Ground,
        ..*base
    };
    let variant = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut config = ours;
        f(&mut config);
        Method { name: name.to_string(), config }
    };
    vec![
        variant("ours", &|_| {}),
        variant("corridor", &|c| c.plane_source = PlaneSource::Corridor),
        variant("front_view_slam", &|c| c.odometry_profile = OdometryProfile::Front),
        variant("side_view_slam", &|c| c.odometry_profile = OdometryProfile::Side),
        variant("sideview_ransac", &|c| c.plane_source = PlaneSource::SideviewRansac),
        variant("optical_flow", &|c| c.tracker = TrackerKind::Flow),
    ]
}

/// Ground truth of the run that produced a log.
pub fn regenerate_truth(header: &LogHeader) -> Result<GroundTruth, SimError> {
    Ok(Simulation::new(header.specs, header.seed)?.truth)
}

/// One report per method, in method order. A method that fails to produce
/// a map or a metric yields a failed (NaN) row.
pub fn benchmark(log: &ObservationLog, truth: &GroundTruth, methods: &[Method]) -> Vec<MetricReport> {
    use rayon::prelude::*;
    let k = log.header.specs.rig.side.intrinsics;
    methods
        .par_iter()
        .map(|m| {
            let result = run_pipeline(log, &m.config)
                .map_err(|e| e.to_string())
                .and_then(|out| evaluate(&out.map, truth, &k, &m.name).map_err(|e| e.to_string()));
            result.unwrap_or_else(|e| {
                log::warn!("method {} failed: {e}", m.name);
                MetricReport::failed(&m.name)
            })
        })
        .collect()
}
