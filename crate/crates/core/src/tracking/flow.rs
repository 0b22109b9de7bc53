use super::{BBox, Detection, TrackedBox, TrackingError};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Detections re-initialize every track on frames that are multiples of this.
    pub redetect_every: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { redetect_every: 200 }
    }
}

/// Centroid propagation between periodic re-detections. Each live box is
/// shifted by an externally observed displacement every frame; nothing
/// corrects the accumulated drift until the next re-detection.
#[derive(Debug, Clone)]
pub struct FlowTracker {
    params: FlowParams,
    frame: usize,
    live: Vec<TrackedBox>,
    next_id: u64,
}

impl Default for FlowTracker {
    fn default() -> Self {
        Self::new(FlowParams::default())
    }
}

impl FlowTracker {
    pub fn new(params: FlowParams) -> Self {
        assert!(params.redetect_every > 0);
        Self { params, frame: 0, live: Vec::new(), next_id: 1 }
    }

    /// Boxes as of the last step, in the order displacements are expected.
    pub fn live(&self) -> &[TrackedBox] {
        &self.live
    }

    /// Index of the frame the next `step` call will process.
    pub fn next_frame(&self) -> usize {
        self.frame
    }

    pub fn is_redetection_frame(&self) -> bool {
        self.frame % self.params.redetect_every == 0
    }

    /// Drops live tracks for which `keep` is false (e.g. centroids that left
    /// the image).
    pub fn retain(&mut self, keep: impl FnMut(&TrackedBox) -> bool) {
        self.live.retain(keep);
    }

    pub fn step(
        &mut self,
        displacements: &[Vec2],
        detections: Option<&[Detection]>,
    ) -> Result<Vec<TrackedBox>, TrackingError> {
        match detections {
            Some(dets) if self.is_redetection_frame() => {
                self.live = dets
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.bbox.is_valid())
                    .map(|(i, d)| {
                        let id = self.next_id;
                        self.next_id += 1;
                        TrackedBox { track_id: id, bbox: d.bbox, detection: Some(i) }
                    })
                    .collect();
            }
            _ => {
                if displacements.len() != self.live.len() {
                    return Err(TrackingError::MissingDisplacement {
                        expected: self.live.len(),
                        got: displacements.len(),
                    });
                }
                for (t, d) in self.live.iter_mut().zip(displacements) {
                    t.bbox = shift(&t.bbox, d);
                    t.detection = None;
                }
            }
        }
        self.frame += 1;
        Ok(self.live.clone())
    }
}

fn shift(b: &BBox, d: &Vec2) -> BBox {
    b.translated(d.x, d.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64) -> Detection {
        Detection { bbox: BBox::new(x, 0.0, x + 20.0, 400.0), score: 1.0, frame: 0 }
    }

    #[test]
    fn zero_displacement_is_static() {
        let mut tr = FlowTracker::default();
        let first = tr.step(&[], Some(&[det(10.0), det(200.0)])).unwrap();
        for _ in 0..5 {
            let out = tr.step(&[Vec2::zeros(); 2], None).unwrap();
            assert_eq!(out.iter().map(|t| t.bbox).collect::<Vec<_>>(), first.iter().map(|t| t.bbox).collect::<Vec<_>>());
        }
    }

    #[test]
    fn redetection_reassigns_every_id() {
        let mut tr = FlowTracker::new(FlowParams { redetect_every: 3 });
        let first = tr.step(&[], Some(&[det(10.0), det(200.0)])).unwrap();
        tr.step(&[Vec2::new(-1.0, 0.0); 2], Some(&[det(0.0)])).unwrap();
        tr.step(&[Vec2::new(-1.0, 0.0); 2], None).unwrap();
        let again = tr.step(&[], Some(&[det(9.0), det(199.0)])).unwrap();
        for t in &again {
            assert!(first.iter().all(|f| f.track_id != t.track_id));
        }
        assert_eq!(again.len(), 2);
    }

    #[test]
    fn detections_between_redetections_are_ignored() {
        let mut tr = FlowTracker::default();
        tr.step(&[], Some(&[det(10.0)])).unwrap();
        let out = tr.step(&[Vec2::new(2.0, 0.0)], Some(&[det(500.0)])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.x_min, 12.0);
    }

    #[test]
    fn missing_displacement_is_an_error() {
        let mut tr = FlowTracker::default();
        tr.step(&[], Some(&[det(10.0), det(50.0)])).unwrap();
        assert_eq!(
            tr.step(&[Vec2::zeros()], None),
            Err(TrackingError::MissingDisplacement { expected: 2, got: 1 })
        );
    }
}
