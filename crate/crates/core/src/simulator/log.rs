//! JSON Lines observation log: one header line, then one frame per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FrameBundle, SimSpec};
use crate::geometry::RigidTransform;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error("{path}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { path: String, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub specs: SimSpec,
    pub seed: u64,
    /// Side-camera pose (camera -> world) at the first frame; the map's
    /// world frame is anchored here.
    pub anchor: RigidTransform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_unix_s: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    pub header: LogHeader,
    pub frames: Vec<FrameBundle>,
}

pub fn write_log(log: &ObservationLog, path: &Path) -> Result<(), LogError> {
    let io = |source| LogError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut line = |v: String| writeln!(w, "{v}");
    line(serde_json::to_string(&log.header).expect("header serializes")).map_err(io)?;
    for f in &log.frames {
        line(serde_json::to_string(f).expect("frame serializes")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_log(path: &Path) -> Result<ObservationLog, LogError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| LogError::Io { path: name.clone(), source })?;
    let schema = |line: usize, message: String| LogError::Schema { path: name.clone(), line, message };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| schema(1, "missing header line".into()))?
        .map_err(|source| LogError::Io { path: name.clone(), source })?;
    let version: serde_json::Value = serde_json::from_str(&first).map_err(|e| schema(1, e.to_string()))?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(LogError::Version { path: name, found: v as u32 }),
        None => return Err(schema(1, "header has no format_version".into())),
    }
    let header: LogHeader = serde_json::from_value(version).map_err(|e| schema(1, e.to_string()))?;
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|source| LogError::Io { path: name.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameBundle = serde_json::from_str(&line).map_err(|e| schema(i + 2, e.to_string()))?;
        frames.push(frame);
    }
    Ok(ObservationLog { header, frames })
}
