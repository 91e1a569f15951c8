//! File formats, recordings, synthetic data and trajectory replay checks.
//!
//! Every format is documented byte-for-byte in `docs/formats.md`.

mod config;
mod formats;
mod recording;
pub mod replay;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{DepthFrame, GeometryError};
use crate::handmodel::LandmarkFrame;

pub use config::{load_pipeline_config, CalibrationSpec, PipelineConfigFile};
pub use formats::{
    chain_from_toml, chain_to_toml, intrinsics_from_toml, intrinsics_to_toml, landmark_from_json,
    landmark_to_json, read_depth, read_landmarks, read_trajectory, trajectory_record_from_json,
    trajectory_record_to_json, write_depth, write_landmarks, write_latency_sidecar,
    write_trajectory, IntrinsicsFile, StatusTag, TrajectoryRecord,
};
pub use recording::{load_recording, write_recording, Manifest, RecordingBundle};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error{}{}: {message}", path.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default(), line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },
    #[error("recording misaligned at frame {index}: {message}")]
    Alignment { index: usize, message: String },
    #[error("synthetic scenario leaves the camera view: {0}")]
    Unreachable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self::Format {
            path: Some(path.to_path_buf()),
            line,
            message: message.into(),
        }
    }
}

/// One aligned landmark observation and depth raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedFrame {
    pub landmarks: LandmarkFrame,
    pub depth: DepthFrame,
}
