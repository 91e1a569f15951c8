use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{CameraIntrinsics, DepthFrame, DEFAULT_DEPTH_SCALE, DEPTH_RANGE_M};
use crate::handmodel::{Handedness, LandmarkFrame, LANDMARK_COUNT};
use crate::kinematics::{GripperJoint, Joint, JointLimits, KinematicChain, Origin};
use crate::pipeline::{CommandStatus, JointCommand, LatencyReport, RejectReason};

const DEPTH_MAGIC: &str = "DEPTH16";

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<(), IoError> {
    fs::write(path, s).map_err(|e| IoError::io(path, e))
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> IoError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    IoError::format(path, line, e.message().to_string())
}

// ---------------------------------------------------------------- intrinsics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
}

fn default_depth_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

impl IntrinsicsFile {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, IoError> {
        Ok(CameraIntrinsics::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )?)
    }
}

pub fn intrinsics_from_toml(path: &Path) -> Result<IntrinsicsFile, IoError> {
    let text = read_to_string(path)?;
    let file: IntrinsicsFile = toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
    file.intrinsics()?;
    if !(file.depth_scale > 0.0) {
        return Err(IoError::format(path, None, "depth_scale must be positive"));
    }
    Ok(file)
}

pub fn intrinsics_to_toml(path: &Path, k: &CameraIntrinsics, depth_scale: f64) -> Result<(), IoError> {
    let file = IntrinsicsFile {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width,
        height: k.height,
        depth_scale,
    };
    write_string(path, &toml::to_string(&file).expect("plain struct serialises"))
}

// --------------------------------------------------------------------- chain

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRecord {
    name: String,
    origin_xyz_m: [f64; 3],
    origin_rpy_rad: [f64; 3],
    axis_xyz: [f64; 3],
    limit_min_rad: f64,
    limit_max_rad: f64,
    #[serde(default)]
    damping: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndEffectorRecord {
    origin_xyz_m: [f64; 3],
    #[serde(default)]
    origin_rpy_rad: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GripperRecord {
    name: String,
    limit_min_rad: f64,
    limit_max_rad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    joint: Vec<JointRecord>,
    end_effector: EndEffectorRecord,
    gripper: Option<GripperRecord>,
}

pub fn chain_from_toml(path: &Path) -> Result<KinematicChain, IoError> {
    let text = read_to_string(path)?;
    let file: ChainFile = toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
    let invalid = |e: crate::kinematics::KinematicsError| IoError::format(path, None, e.to_string());
    let joints = file
        .joint
        .into_iter()
        .map(|j| {
            Joint::new(
                j.name,
                Origin {
                    xyz: j.origin_xyz_m,
                    rpy: j.origin_rpy_rad,
                },
                j.axis_xyz,
                JointLimits::new(j.limit_min_rad, j.limit_max_rad),
                j.damping,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let ee = Origin {
        xyz: file.end_effector.origin_xyz_m,
        rpy: file.end_effector.origin_rpy_rad,
    };
    let gripper = file.gripper.map(|g| GripperJoint {
        name: g.name,
        limits: JointLimits::new(g.limit_min_rad, g.limit_max_rad),
    });
    KinematicChain::new(joints, ee, gripper).map_err(invalid)
}

pub fn chain_to_toml(path: &Path, chain: &KinematicChain) -> Result<(), IoError> {
    let file = ChainFile {
        joint: chain
            .joints()
            .iter()
            .map(|j| JointRecord {
                name: j.name.clone(),
                origin_xyz_m: j.origin.xyz,
                origin_rpy_rad: j.origin.rpy,
                axis_xyz: [j.axis.x, j.axis.y, j.axis.z],
                limit_min_rad: j.limits.min,
                limit_max_rad: j.limits.max,
                damping: j.damping,
            })
            .collect(),
        end_effector: EndEffectorRecord {
            origin_xyz_m: chain.end_effector().xyz,
            origin_rpy_rad: chain.end_effector().rpy,
        },
        gripper: chain.gripper().map(|g| GripperRecord {
            name: g.name.clone(),
            limit_min_rad: g.limits.min,
            limit_max_rad: g.limits.max,
        }),
    };
    write_string(path, &toml::to_string(&file).expect("plain struct serialises"))
}

// ----------------------------------------------------------------- landmarks

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkRecord {
    timestamp_s: f64,
    handedness: Handedness,
    landmarks: Vec<(f64, f64, bool)>,
}

pub fn landmark_to_json(frame: &LandmarkFrame) -> String {
    let rec = LandmarkRecord {
        timestamp_s: frame.timestamp,
        handedness: frame.handedness,
        landmarks: frame
            .pixels
            .iter()
            .zip(frame.pixel_valid)
            .map(|(p, v)| (p[0], p[1], v))
            .collect(),
    };
    serde_json::to_string(&rec).expect("finite landmark values serialise")
}

/// Parses one landmark record; `Err` carries the message only.
pub fn landmark_from_json(line: &str) -> Result<LandmarkFrame, String> {
    let rec: LandmarkRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.landmarks.len() != LANDMARK_COUNT {
        return Err(format!(
            "expected {LANDMARK_COUNT} landmarks, found {}",
            rec.landmarks.len()
        ));
    }
    let mut pixels = [[0.0; 2]; LANDMARK_COUNT];
    let mut pixel_valid = [false; LANDMARK_COUNT];
    for (i, (u, v, ok)) in rec.landmarks.into_iter().enumerate() {
        pixels[i] = [u, v];
        pixel_valid[i] = ok;
    }
    Ok(LandmarkFrame {
        timestamp: rec.timestamp_s,
        handedness: rec.handedness,
        pixels,
        pixel_valid,
    })
}

pub fn write_landmarks(path: &Path, frames: &[LandmarkFrame]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        writeln!(w, "{}", landmark_to_json(f)).map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Reads a landmark stream; blank lines are skipped.
pub fn read_landmarks(path: &Path) -> Result<Vec<LandmarkFrame>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(landmark_from_json(&line).map_err(|m| IoError::format(path, Some(i + 1), m))?);
    }
    Ok(out)
}

// --------------------------------------------------------------------- depth

/// Writes `DEPTH16 <width> <height> <scale>\n` followed by little-endian
/// `u16` samples in row-major order.
pub fn write_depth(path: &Path, depth: &DepthFrame) -> Result<(), IoError> {
    let mut bytes = format!(
        "{DEPTH_MAGIC} {} {} {}\n",
        depth.width, depth.height, depth.scale
    )
    .into_bytes();
    bytes.reserve(depth.raster.len() * 2);
    for v in &depth.raster {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Reads a `DEPTH16` raster or a binary 16-bit PGM (`P5`, maxval 65535,
/// big-endian samples). PGM carries no scale, so `pgm_scale` is used.
pub fn read_depth(path: &Path, pgm_scale: f64) -> Result<DepthFrame, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return read_pgm(path, &bytes, pgm_scale);
    }
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| IoError::format(path, Some(1), "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| IoError::format(path, Some(1), "header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() != 4 || fields[0] != DEPTH_MAGIC {
        return Err(IoError::format(
            path,
            Some(1),
            format!("expected `{DEPTH_MAGIC} <width> <height> <scale>`, found {header:?}"),
        ));
    }
    let bad = |what: &str| IoError::format(path, Some(1), format!("invalid {what}"));
    let width: u32 = fields[1].parse().map_err(|_| bad("width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("scale"))?;
    if !(scale > 0.0) {
        return Err(bad("scale"));
    }
    let raster = decode_u16(path, &bytes[nl + 1..], width, height, u16::from_le_bytes)?;
    Ok(DepthFrame {
        width,
        height,
        scale,
        valid_range: DEPTH_RANGE_M,
        raster,
    })
}

fn decode_u16(
    path: &Path,
    data: &[u8],
    width: u32,
    height: u32,
    from: fn([u8; 2]) -> u16,
) -> Result<Vec<u16>, IoError> {
    let expected = width as usize * height as usize * 2;
    if data.len() != expected {
        return Err(IoError::format(
            path,
            None,
            format!("expected {expected} bytes of samples, found {}", data.len()),
        ));
    }
    Ok(data.chunks_exact(2).map(|c| from([c[0], c[1]])).collect())
}

fn read_pgm(path: &Path, bytes: &[u8], scale: f64) -> Result<DepthFrame, IoError> {
    // header: magic, width, height, maxval separated by whitespace/comments,
    // then exactly one whitespace byte before the samples
    let mut tokens = Vec::new();
    let mut i = 2;
    while tokens.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(IoError::format(path, None, "truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    let parse = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| IoError::format(path, None, format!("invalid PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&tokens[0])?, parse(&tokens[1])?, parse(&tokens[2])?);
    if maxval < 256 {
        return Err(IoError::format(path, None, "PGM depth must be 16-bit (maxval >= 256)"));
    }
    let raster = decode_u16(path, &bytes[(i + 1).min(bytes.len())..], width, height, u16::from_be_bytes)?;
    Ok(DepthFrame {
        width,
        height,
        scale,
        valid_range: DEPTH_RANGE_M,
        raster,
    })
}

// ---------------------------------------------------------------- trajectory

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusTag {
    Solved,
    HeldLastValid,
    Rejected,
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub timestamp_s: f64,
    pub status: StatusTag,
    pub reason: Option<RejectReason>,
    /// Arm joints then gripper, radians.
    pub angles_rad: Vec<f64>,
    pub normalized: Vec<f64>,
    pub motor: Vec<f64>,
    pub gripper_level: Option<u8>,
    pub ik_iterations: usize,
    pub ik_residual: Option<f64>,
}

impl From<&JointCommand> for TrajectoryRecord {
    fn from(c: &JointCommand) -> Self {
        let status = match c.status {
            CommandStatus::Solved => StatusTag::Solved,
            CommandStatus::HeldLastValid(_) => StatusTag::HeldLastValid,
            CommandStatus::Rejected(_) => StatusTag::Rejected,
        };
        Self {
            timestamp_s: c.timestamp,
            status,
            reason: c.status.reason(),
            angles_rad: c.angles(),
            normalized: c.normalized.clone(),
            motor: c.motor.clone(),
            gripper_level: c.gripper_level,
            ik_iterations: c.ik_iterations,
            ik_residual: c.ik_residual,
        }
    }
}

impl TrajectoryRecord {
    pub fn to_command(&self) -> Result<JointCommand, String> {
        let status = match (self.status, self.reason) {
            (StatusTag::Solved, None) => CommandStatus::Solved,
            (StatusTag::HeldLastValid, Some(r)) => CommandStatus::HeldLastValid(r),
            (StatusTag::Rejected, Some(r)) => CommandStatus::Rejected(r),
            (s, r) => return Err(format!("status {s:?} inconsistent with reason {r:?}")),
        };
        let (gripper, arm) = self
            .angles_rad
            .split_last()
            .ok_or_else(|| "angles_rad is empty".to_string())?;
        Ok(JointCommand {
            timestamp: self.timestamp_s,
            status,
            arm_angles: arm.to_vec(),
            gripper_angle: *gripper,
            normalized: self.normalized.clone(),
            motor: self.motor.clone(),
            gripper_level: self.gripper_level,
            ik_iterations: self.ik_iterations,
            ik_residual: self.ik_residual,
        })
    }
}

pub fn trajectory_record_to_json(c: &JointCommand) -> String {
    serde_json::to_string(&TrajectoryRecord::from(c)).expect("finite trajectory values serialise")
}

pub fn trajectory_record_from_json(line: &str) -> Result<TrajectoryRecord, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

pub fn write_trajectory(path: &Path, commands: &[JointCommand]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for c in commands {
        writeln!(w, "{}", trajectory_record_to_json(c)).map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = trajectory_record_from_json(&line).map_err(|m| IoError::format(path, Some(i + 1), m))?;
        rec.to_command().map_err(|m| IoError::format(path, Some(i + 1), m))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_latency_sidecar(path: &Path, report: &LatencyReport) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(&report.sidecar()).expect("sidecar serialises");
    write_string(path, &(text + "\n"))
}
