//! Under-canopy corn row mapping.
//!
//! Estimates the ground and corn planes around a rover driving down a corn
//! row, tracks stalk detections in the side camera, and localizes each stalk
//! by intersecting its detection centroid ray with the corn plane. A seeded
//! field simulator produces observation logs with full ground truth, and the
//! evaluation module scores maps with the neighbouring-gap and re-projection
//! metrics.

pub mod geometry;
pub mod plane_estimation;
pub mod tracking;
pub mod mapping;
pub mod simulator;
pub mod pipeline;
pub mod evaluation;
