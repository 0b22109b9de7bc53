use nalgebra::{SMatrix, SVector};

use super::BBox;

pub type StateVec = SVector<f64, 7>;
pub type StateMat = SMatrix<f64, 7, 7>;
type MeasVec = SVector<f64, 4>;
type MeasMat = SMatrix<f64, 4, 4>;
type ObsMat = SMatrix<f64, 4, 7>;

/// Box state `(u, v, s, r, du, dv, ds)`: centre, area, aspect ratio and the
/// per-frame velocities of the first three. Aspect is modelled as constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub covariance: StateMat,
}

/// Noise model for one track. Area and aspect terms scale with the box the
/// track was born from, so the filter behaves the same for thin stalks and
/// large boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanNoise {
    pub initial: StateMat,
    pub process: StateMat,
    pub measurement: MeasMat,
}

impl KalmanNoise {
    /// Constants of the reference SORT implementation.
    pub fn sort_reference() -> Self {
        let initial = StateMat::from_diagonal(&StateVec::from([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4]));
        let process = StateMat::from_diagonal(&StateVec::from([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4]));
        let measurement = MeasMat::from_diagonal(&MeasVec::from([1.0, 1.0, 10.0, 10.0]));
        Self { initial, process, measurement }
    }

    pub fn for_box(b: &BBox) -> Self {
        let z = measurement_of(b);
        let (s, r) = (z[2].max(1.0), z[3].max(1e-6));
        let initial = StateMat::from_diagonal(&StateVec::from([
            10.0,
            10.0,
            (0.1 * s).powi(2),
            (0.1 * r).powi(2),
            1e4,
            1e4,
            s * s,
        ]));
        let process = StateMat::from_diagonal(&StateVec::from([
            1.0,
            1.0,
            (0.01 * s).powi(2),
            (0.01 * r).powi(2),
            0.01,
            0.01,
            (1e-3 * s).powi(2),
        ]));
        let measurement =
            MeasMat::from_diagonal(&MeasVec::from([1.0, 1.0, (0.05 * s).powi(2), (0.05 * r).powi(2)]));
        Self { initial, process, measurement }
    }
}

fn measurement_of(b: &BBox) -> MeasVec {
    let (w, h) = (b.width(), b.height());
    let c = b.center();
    MeasVec::from([c.u, c.v, w * h, w / h])
}

fn transition() -> StateMat {
    let mut f = StateMat::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> ObsMat {
    let mut h = ObsMat::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

impl TrackState {
    pub fn from_bbox(b: &BBox, noise: &KalmanNoise) -> Self {
        let z = measurement_of(b);
        let mean = StateVec::from([z[0], z[1], z[2], z[3], 0.0, 0.0, 0.0]);
        Self { mean, covariance: noise.initial }
    }

    pub fn bbox(&self) -> BBox {
        let s = self.mean[2].max(0.0);
        let r = self.mean[3].max(0.0);
        let w = (s * r).sqrt();
        let h = if w > 0.0 { s / w } else { 0.0 };
        BBox::from_center(crate::geometry::Pixel::new(self.mean[0], self.mean[1]), w, h)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
    }
}

/// Constant-velocity prediction one frame ahead.
pub fn kalman_predict(ts: &TrackState, noise: &KalmanNoise) -> TrackState {
    let mut mean = ts.mean;
    if mean[2] + mean[6] <= 0.0 {
        mean[6] = 0.0;
    }
    let f = transition();
    let covariance = f * ts.covariance * f.transpose() + noise.process;
    TrackState { mean: f * mean, covariance: symmetrize(covariance) }
}

pub fn kalman_update(ts: &TrackState, det: &BBox, noise: &KalmanNoise) -> TrackState {
    kalman_update_with(ts, det, &noise.measurement)
}

/// Measurement update with an explicit measurement covariance.
pub fn kalman_update_with(ts: &TrackState, det: &BBox, measurement_cov: &MeasMat) -> TrackState {
    let h = observation();
    let z = measurement_of(det);
    let innovation = z - h * ts.mean;
    let s = h * ts.covariance * h.transpose() + measurement_cov;
    let Some(s_inv) = s.try_inverse() else {
        return *ts;
    };
    let gain = ts.covariance * h.transpose() * s_inv;
    let mean = ts.mean + gain * innovation;
    let covariance = (StateMat::identity() - gain * h) * ts.covariance;
    TrackState { mean, covariance: symmetrize(covariance) }
}

fn symmetrize(m: StateMat) -> StateMat {
    (m + m.transpose()) * 0.5
}
