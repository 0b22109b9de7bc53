use super::{hungarian_min_cost, iou, kalman_predict, kalman_update, Detection, KalmanNoise, TrackState, TrackedBox};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SortParams {
    /// Matches below this IoU are rejected and the detection starts a new track.
    pub iou_threshold: f64,
    /// Tracks unmatched for more than this many frames are retired.
    pub max_age: usize,
    /// Tracks are reported once they have this many hits.
    pub min_hits: usize,
}

impl Default for SortParams {
    fn default() -> Self {
        Self { iou_threshold: 0.3, max_age: 5, min_hits: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub noise: KalmanNoise,
    pub hits: usize,
    pub misses_since_hit: usize,
    pub age: usize,
}

/// SORT tracker. Ids start at 1 and are never reused.
#[derive(Debug, Clone)]
pub struct SortTracker {
    params: SortParams,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Default for SortTracker {
    fn default() -> Self {
        Self::new(SortParams::default())
    }
}

impl SortTracker {
    pub fn new(params: SortParams) -> Self {
        Self { params, tracks: Vec::new(), next_id: 1 }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Predict, associate, update, spawn and retire for one frame of
    /// detections. Reported boxes are the associated detections.
    pub fn step(&mut self, detections: &[Detection]) -> Vec<TrackedBox> {
        for t in &mut self.tracks {
            t.state = kalman_predict(&t.state, &t.noise);
            t.age += 1;
            t.misses_since_hit += 1;
        }
        self.tracks.retain(|t| t.state.is_finite());

        let predicted: Vec<_> = self.tracks.iter().map(|t| t.state.bbox()).collect();
        let cost: Vec<Vec<f64>> = predicted
            .iter()
            .map(|p| detections.iter().map(|d| 1.0 - iou(p, &d.bbox)).collect())
            .collect();
        let assignment = if detections.is_empty() { vec![None; self.tracks.len()] } else { hungarian_min_cost(&cost) };

        let mut det_used = vec![false; detections.len()];
        let mut out = Vec::new();
        for (ti, assigned) in assignment.iter().enumerate() {
            let Some(di) = *assigned else { continue };
            if iou(&predicted[ti], &detections[di].bbox) < self.params.iou_threshold {
                continue;
            }
            det_used[di] = true;
            let t = &mut self.tracks[ti];
            t.state = kalman_update(&t.state, &detections[di].bbox, &t.noise);
            t.hits += 1;
            t.misses_since_hit = 0;
            if t.hits >= self.params.min_hits {
                out.push(TrackedBox { track_id: t.id, bbox: detections[di].bbox, detection: Some(di) });
            }
        }

        for (di, det) in detections.iter().enumerate() {
            if det_used[di] || !det.bbox.is_valid() {
                continue;
            }
            let noise = KalmanNoise::for_box(&det.bbox);
            let track = Track {
                id: self.next_id,
                state: TrackState::from_bbox(&det.bbox, &noise),
                noise,
                hits: 1,
                misses_since_hit: 0,
                age: 0,
            };
            self.next_id += 1;
            if track.hits >= self.params.min_hits {
                out.push(TrackedBox { track_id: track.id, bbox: det.bbox, detection: Some(di) });
            }
            self.tracks.push(track);
        }

        let max_age = self.params.max_age;
        self.tracks.retain(|t| t.misses_since_hit <= max_age);
        out.sort_by_key(|b| b.track_id);
        out
    }
}
