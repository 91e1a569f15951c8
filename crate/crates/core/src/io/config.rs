use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::formats::{chain_from_toml, intrinsics_from_toml};
use super::IoError;
use crate::geometry::{CalibrationTransform, CameraIntrinsics};
use crate::gripper::{GripperMode, GripperParams};
use crate::handmodel::Handedness;
use crate::kinematics::{IkParams, KinematicChain};
use crate::pipeline::PipelineConfig;

/// Pipeline configuration as written on disk. Every field is optional;
/// omitted values take the built-in defaults. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfigFile {
    pub chain: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub handedness: Option<Handedness>,
    pub landmark_alpha: Option<f64>,
    pub joint_alpha: Option<f64>,
    pub z_floor_m: Option<f64>,
    pub calibration: Option<CalibrationSpec>,
    #[serde(default)]
    pub ik: IkSection,
    #[serde(default)]
    pub gripper: GripperSection,
}

/// Calibration source. `preset`, `theta_mount_deg` and `r_cam` are mutually
/// exclusive; the URDF offset may accompany either of the last two.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub preset: Option<String>,
    pub theta_mount_deg: Option<f64>,
    /// Row-major camera rotation.
    pub r_cam: Option<[[f64; 3]; 3]>,
    pub t_cam_m: Option<[f64; 3]>,
    pub r_urdf: Option<[[f64; 3]; 3]>,
    pub t_urdf_m: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IkSection {
    pub max_iterations: Option<usize>,
    pub residual_threshold: Option<f64>,
    pub position_weight: Option<f64>,
    pub orientation_weight: Option<f64>,
    pub step_clamp_rad: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSection {
    /// `normal`, `binary` or `offset:<rad>`.
    pub mode: Option<String>,
    pub phi_min_rad: Option<f64>,
    pub phi_max_rad: Option<f64>,
    pub calibration_offset_rad: Option<f64>,
    pub binary_threshold_deg: Option<f64>,
}

fn matrix(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

impl CalibrationSpec {
    pub fn transform(&self) -> Result<CalibrationTransform, IoError> {
        let sources = [
            self.preset.is_some(),
            self.theta_mount_deg.is_some(),
            self.r_cam.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(IoError::Config(
                "calibration needs exactly one of preset, theta_mount_deg or r_cam".into(),
            ));
        }
        if let Some(name) = &self.preset {
            if name != "glasses" {
                return Err(IoError::Config(format!(
                    "unknown calibration preset {name:?}; available: glasses"
                )));
            }
            if self.t_cam_m.is_some() || self.r_urdf.is_some() || self.t_urdf_m.is_some() {
                return Err(IoError::Config(
                    "calibration preset cannot be combined with explicit values".into(),
                ));
            }
            return Ok(CalibrationTransform::preset());
        }
        let t_cam = self
            .t_cam_m
            .map(Vector3::from)
            .ok_or_else(|| IoError::Config("calibration needs t_cam_m".into()))?;
        let r_urdf = self.r_urdf.map(matrix).unwrap_or_else(Matrix3::identity);
        let t_urdf = self.t_urdf_m.map(Vector3::from).unwrap_or_else(Vector3::zeros);
        Ok(match (self.theta_mount_deg, self.r_cam) {
            (Some(deg), _) => CalibrationTransform::from_mount(deg.to_radians(), t_cam, r_urdf, t_urdf)?,
            (_, Some(r)) => CalibrationTransform::new(matrix(r), t_cam, r_urdf, t_urdf)?,
            _ => unreachable!("exactly one source checked above"),
        })
    }
}

pub fn load_pipeline_config(path: &Path) -> Result<PipelineConfigFile, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    toml::from_str(&text).map_err(|e| IoError::Config(format!("{}: {}", path.display(), e.message())))
}

impl PipelineConfigFile {
    /// Builds a validated runtime config. `base_dir` anchors relative paths;
    /// `fallback_intrinsics` is used when the file names none.
    pub fn build(
        &self,
        base_dir: &Path,
        fallback_intrinsics: Option<CameraIntrinsics>,
    ) -> Result<PipelineConfig, IoError> {
        let intrinsics = match &self.intrinsics {
            Some(p) => intrinsics_from_toml(&base_dir.join(p))?.intrinsics()?,
            None => fallback_intrinsics
                .ok_or_else(|| IoError::Config("no camera intrinsics given".into()))?,
        };
        let chain = match &self.chain {
            Some(p) => chain_from_toml(&base_dir.join(p))?,
            None => KinematicChain::so_arm101(),
        };
        let mut cfg = PipelineConfig::new(intrinsics, chain);
        if let Some(c) = &self.calibration {
            cfg.calibration = c.transform()?;
        }
        if let Some(h) = self.handedness {
            cfg.handedness = h;
        }
        if let Some(a) = self.landmark_alpha {
            cfg.landmark_alpha = a;
        }
        if let Some(a) = self.joint_alpha {
            cfg.joint_alpha = a;
        }
        if let Some(z) = self.z_floor_m {
            cfg.z_floor = z;
        }
        cfg.ik = self.ik.apply(cfg.ik);
        cfg.gripper = self.gripper.apply(cfg.gripper)?;
        cfg.validate().map_err(|e| IoError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

impl IkSection {
    fn apply(&self, mut p: IkParams) -> IkParams {
        if let Some(v) = self.max_iterations {
            p.max_iterations = v;
        }
        if let Some(v) = self.residual_threshold {
            p.residual_threshold = v;
        }
        if let Some(v) = self.position_weight {
            p.position_weight = v;
        }
        if let Some(v) = self.orientation_weight {
            p.orientation_weight = v;
        }
        if let Some(v) = self.step_clamp_rad {
            p.step_clamp = v;
        }
        p
    }
}

impl GripperSection {
    fn apply(&self, mut p: GripperParams) -> Result<GripperParams, IoError> {
        if let Some(m) = &self.mode {
            p.mode = m.parse::<GripperMode>().map_err(|e| IoError::Config(e.to_string()))?;
        }
        if let Some(v) = self.phi_min_rad {
            p.phi_min = v;
        }
        if let Some(v) = self.phi_max_rad {
            p.phi_max = v;
        }
        if let Some(v) = self.calibration_offset_rad {
            p.calibration_offset = v;
        }
        if let Some(v) = self.binary_threshold_deg {
            p.binary_threshold = v.to_radians();
        }
        Ok(p)
    }
}
