use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formats::{
    intrinsics_from_toml, intrinsics_to_toml, landmark_to_json, read_depth, read_landmarks,
    write_depth, IntrinsicsFile,
};
use super::{IoError, RecordedFrame};
use crate::geometry::CameraIntrinsics;
use crate::handmodel::LandmarkFrame;

pub const MANIFEST_FILE: &str = "manifest.toml";
const INDEX_PLACEHOLDER: &str = "{index}";

/// Recording manifest; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub intrinsics: PathBuf,
    pub landmarks: PathBuf,
    /// Depth path template; `{index}` expands to the zero-padded 6-digit frame index.
    pub depth_pattern: String,
    pub frame_count: usize,
    pub fps: f64,
}

impl Manifest {
    pub fn depth_path(&self, index: usize) -> PathBuf {
        PathBuf::from(self.depth_pattern.replace(INDEX_PLACEHOLDER, &format!("{index:06}")))
    }
}

#[derive(Debug, Clone)]
pub struct RecordingBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub intrinsics_file: IntrinsicsFile,
    pub landmarks: Vec<LandmarkFrame>,
    depth_paths: Vec<PathBuf>,
}

impl RecordingBundle {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics_file
            .intrinsics()
            .expect("validated when the bundle was loaded")
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Frames in order; depth rasters are read lazily.
    pub fn frames(&self) -> impl Iterator<Item = Result<RecordedFrame, IoError>> + '_ {
        let k = self.intrinsics();
        let scale = self.intrinsics_file.depth_scale;
        self.landmarks
            .iter()
            .zip(&self.depth_paths)
            .enumerate()
            .map(move |(index, (lm, path))| {
                let depth = read_depth(path, scale)?;
                depth.check_matches(&k).map_err(|e| IoError::Alignment {
                    index,
                    message: e.to_string(),
                })?;
                Ok(RecordedFrame {
                    landmarks: lm.clone(),
                    depth,
                })
            })
    }
}

/// Loads a recording from its manifest. Landmarks are read eagerly and every
/// depth file is checked for existence; rasters themselves load on demand.
pub fn load_recording(manifest_path: &Path) -> Result<RecordingBundle, IoError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| IoError::io(manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| IoError::format(manifest_path, None, e.message().to_string()))?;
    if !manifest.depth_pattern.contains(INDEX_PLACEHOLDER) {
        return Err(IoError::format(
            manifest_path,
            None,
            format!("depth_pattern must contain {INDEX_PLACEHOLDER}"),
        ));
    }
    if !(manifest.fps > 0.0) {
        return Err(IoError::format(manifest_path, None, "fps must be positive"));
    }
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let intrinsics_file = intrinsics_from_toml(&dir.join(&manifest.intrinsics))?;
    let landmarks = read_landmarks(&dir.join(&manifest.landmarks))?;
    if landmarks.len() != manifest.frame_count {
        return Err(IoError::Alignment {
            index: landmarks.len().min(manifest.frame_count),
            message: format!(
                "manifest declares {} frames but the landmark stream has {}",
                manifest.frame_count,
                landmarks.len()
            ),
        });
    }
    let mut depth_paths = Vec::with_capacity(landmarks.len());
    for index in 0..manifest.frame_count {
        let p = dir.join(manifest.depth_path(index));
        if !p.is_file() {
            return Err(IoError::Alignment {
                index,
                message: format!("missing depth file {}", p.display()),
            });
        }
        depth_paths.push(p);
    }
    Ok(RecordingBundle {
        dir,
        manifest,
        intrinsics_file,
        landmarks,
        depth_paths,
    })
}

/// Writes frames as a recording bundle under `dir` and returns the manifest path.
pub fn write_recording<I>(
    dir: &Path,
    intrinsics: &CameraIntrinsics,
    depth_scale: f64,
    fps: f64,
    frames: I,
) -> Result<PathBuf, IoError>
where
    I: IntoIterator<Item = Result<RecordedFrame, IoError>>,
{
    let depth_dir = dir.join("depth");
    fs::create_dir_all(&depth_dir).map_err(|e| IoError::io(&depth_dir, e))?;
    intrinsics_to_toml(&dir.join("intrinsics.toml"), intrinsics, depth_scale)?;

    let lm_path = dir.join("landmarks.jsonl");
    let mut lm = BufWriter::new(fs::File::create(&lm_path).map_err(|e| IoError::io(&lm_path, e))?);
    let mut manifest = Manifest {
        intrinsics: "intrinsics.toml".into(),
        landmarks: "landmarks.jsonl".into(),
        depth_pattern: format!("depth/{INDEX_PLACEHOLDER}.d16"),
        frame_count: 0,
        fps,
    };
    for (index, frame) in frames.into_iter().enumerate() {
        let frame = frame?;
        writeln!(lm, "{}", landmark_to_json(&frame.landmarks)).map_err(|e| IoError::io(&lm_path, e))?;
        write_depth(&dir.join(manifest.depth_path(index)), &frame.depth)?;
        manifest.frame_count += 1;
    }
    lm.flush().map_err(|e| IoError::io(&lm_path, e))?;

    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, toml::to_string(&manifest).expect("manifest serialises"))
        .map_err(|e| IoError::io(&path, e))?;
    Ok(path)
}
