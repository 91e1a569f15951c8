//! Synthetic recordings with known ground truth.
//!
//! A hand is posed in robot space so that its target frame equals a chosen
//! pose, projected through the inverse calibration into pixels, and rendered
//! into a depth raster as small constant-depth disks around each landmark.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::recording::write_recording;
use super::{IoError, RecordedFrame};
use crate::geometry::{
    project, CalibrationTransform, CameraIntrinsics, DepthFrame, Point3, DEFAULT_DEPTH_SCALE,
    DEPTH_RANGE_M,
};
use crate::handmodel::{Handedness, LandmarkFrame, LandmarkId, LANDMARK_COUNT};
use crate::kinematics::KinematicChain;
use crate::retarget::{OrientationSource, TargetPose};

/// Arm configuration whose end-effector pose anchors every scenario.
pub const ANCHOR_JOINTS: [f64; 5] = [0.1, 0.2, 0.7, -1.2, 0.0];
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Fixed pose, fixed aperture.
    StaticGrasp,
    /// Constant orientation, position moving along the horizontal radial
    /// direction through the anchor.
    LineSweep,
    /// Fixed pose, aperture oscillating across the binary threshold.
    GraspCycle,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::StaticGrasp, Scenario::LineSweep, Scenario::GraspCycle];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::StaticGrasp => "static_grasp",
            Scenario::LineSweep => "line_sweep",
            Scenario::GraspCycle => "grasp_cycle",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}; expected static_grasp, line_sweep or grasp_cycle"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub anchor_joints: Vec<f64>,
    /// Distance between thumb and index MCP joints.
    pub mcp_span_m: f64,
    /// Thumb and index MCP-to-tip length.
    pub finger_length_m: f64,
    /// Half-length of the line sweep.
    pub sweep_half_length_m: f64,
    /// Mean and amplitude of the finger spread angle in grasp_cycle, radians.
    pub spread_mean_rad: f64,
    pub spread_amplitude_rad: f64,
    /// Frames per grasp_cycle period.
    pub cycle_frames: usize,
    pub splat_radius_px: i64,
    pub depth_scale: f64,
    pub fps: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            anchor_joints: ANCHOR_JOINTS.to_vec(),
            mcp_span_m: 0.08,
            finger_length_m: 0.07,
            sweep_half_length_m: 0.03,
            spread_mean_rad: 5f64.to_radians(),
            spread_amplitude_rad: 20f64.to_radians(),
            cycle_frames: 60,
            splat_radius_px: 2,
            depth_scale: DEFAULT_DEPTH_SCALE,
            fps: 30.0,
        }
    }
}

/// Generated recording held in memory; depth rasters are rendered on demand.
#[derive(Debug, Clone)]
pub struct SynthRecording {
    pub scenario: Scenario,
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
    pub fps: f64,
    pub landmarks: Vec<LandmarkFrame>,
    pub ground_truth: Vec<TargetPose>,
    /// Raw thumb/index tip opening angle around the target, radians.
    pub opening_angles: Vec<f64>,
    camera_points: Vec<[Vector3<f64>; LANDMARK_COUNT]>,
    splat_radius_px: i64,
}

impl SynthRecording {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Camera-frame landmark positions of frame `i`.
    pub fn camera_points(&self, i: usize) -> &[Vector3<f64>; LANDMARK_COUNT] {
        &self.camera_points[i]
    }

    pub fn render_depth(&self, i: usize) -> DepthFrame {
        let k = &self.intrinsics;
        let mut depth = DepthFrame::empty(k.width, k.height, self.depth_scale);
        let mut order: Vec<usize> = (0..LANDMARK_COUNT).collect();
        // far first so nearer landmarks overwrite on overlap
        order.sort_by(|a, b| self.camera_points[i][*b].z.total_cmp(&self.camera_points[i][*a].z));
        let r = self.splat_radius_px;
        for j in order {
            let [u, v] = self.landmarks[i].pixels[j];
            let raw = (self.camera_points[i][j].z * self.depth_scale).round() as u16;
            let (cu, cv) = (u.round() as i64, v.round() as i64);
            for dv in -r..=r {
                for du in -r..=r {
                    if du * du + dv * dv > r * r {
                        continue;
                    }
                    let (col, row) = (cu + du, cv + dv);
                    if col < 0 || row < 0 || col >= k.width as i64 || row >= k.height as i64 {
                        continue;
                    }
                    depth.set_raw(col as u32, row as u32, raw);
                }
            }
        }
        depth
    }

    pub fn frame(&self, i: usize) -> RecordedFrame {
        RecordedFrame {
            landmarks: self.landmarks[i].clone(),
            depth: self.render_depth(i),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<RecordedFrame, IoError>> + '_ {
        (0..self.len()).map(|i| Ok(self.frame(i)))
    }

    /// Writes the bundle and a ground-truth sidecar into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, IoError> {
        let manifest = write_recording(dir, &self.intrinsics, self.depth_scale, self.fps, self.frames())?;
        let path = dir.join(GROUND_TRUTH_FILE);
        let file = fs::File::create(&path).map_err(|e| IoError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for (i, gt) in self.ground_truth.iter().enumerate() {
            let q = gt.orientation.quaternion();
            let rec = GroundTruthRecord {
                index: i,
                timestamp_s: self.landmarks[i].timestamp,
                position_m: [gt.position.x(), gt.position.y(), gt.position.z()],
                orientation_wxyz: [q.w, q.i, q.j, q.k],
                opening_angle_rad: self.opening_angles[i],
            };
            let line = serde_json::to_string(&rec).expect("ground truth serialises");
            writeln!(w, "{line}").map_err(|e| IoError::io(&path, e))?;
        }
        w.flush().map_err(|e| IoError::io(&path, e))?;
        Ok(manifest)
    }
}

/// One line of the ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub index: usize,
    pub timestamp_s: f64,
    pub position_m: [f64; 3],
    pub orientation_wxyz: [f64; 4],
    pub opening_angle_rad: f64,
}

/// Robot-frame landmarks for a hand whose target frame is `(p, r)`.
///
/// Thumb and index MCPs sit at `p ∓ span/2·e1`; their tips leave the MCPs
/// at angle `spread` either side of `e2`, so the mean finger direction is
/// exactly `e2`. The remaining fingers curl towards `−e3`.
pub fn hand_landmarks(
    p: &Vector3<f64>,
    r: &Matrix3<f64>,
    spread: f64,
    params: &SynthParams,
) -> [Vector3<f64>; LANDMARK_COUNT] {
    let (e1, e2, e3) = (r.column(0).into_owned(), r.column(1).into_owned(), r.column(2).into_owned());
    let half = params.mcp_span_m / 2.0;
    let len = params.finger_length_m;
    let (s, c) = spread.sin_cos();
    let thumb_mcp = p - half * e1;
    let index_mcp = p + half * e1;
    let thumb_tip = thumb_mcp + len * (c * e2 - s * e1);
    let index_tip = index_mcp + len * (c * e2 + s * e1);
    let wrist = p - 0.09 * e2;

    let mut out = [Vector3::zeros(); LANDMARK_COUNT];
    let mut put = |id: LandmarkId, v: Vector3<f64>| out[id.index()] = v;
    put(LandmarkId::WRIST, wrist);
    put(LandmarkId::THUMB_CMC, (wrist + thumb_mcp) / 2.0);
    put(LandmarkId::THUMB_MCP, thumb_mcp);
    put(LandmarkId::THUMB_IP, (thumb_mcp + thumb_tip) / 2.0);
    put(LandmarkId::THUMB_TIP, thumb_tip);
    put(LandmarkId::INDEX_FINGER_MCP, index_mcp);
    put(LandmarkId::INDEX_FINGER_PIP, index_mcp + (index_tip - index_mcp) / 3.0);
    put(LandmarkId::INDEX_FINGER_DIP, index_mcp + 2.0 * (index_tip - index_mcp) / 3.0);
    put(LandmarkId::INDEX_FINGER_TIP, index_tip);

    let curl = 40f64.to_radians();
    let dir = curl.cos() * e2 - curl.sin() * e3;
    for (k, mcp_id) in [
        LandmarkId::MIDDLE_FINGER_MCP,
        LandmarkId::RING_FINGER_MCP,
        LandmarkId::PINKY_MCP,
    ]
    .into_iter()
    .enumerate()
    {
        let mcp = index_mcp + 0.022 * (k + 1) as f64 * e1 - 0.005 * (k + 1) as f64 * e2;
        let base = mcp_id.index();
        for step in 0..4 {
            out[base + step] = mcp + 0.02 * step as f64 * dir;
        }
    }
    out
}

fn opening_angle(h: &[Vector3<f64>; LANDMARK_COUNT], p: &Vector3<f64>) -> f64 {
    let a = h[LandmarkId::THUMB_TIP.index()] - p;
    let b = h[LandmarkId::INDEX_FINGER_TIP.index()] - p;
    a.angle(&b)
}

/// Generates `frames` frames of `scenario`.
pub fn synth_recording(
    scenario: Scenario,
    chain: &KinematicChain,
    calibration: &CalibrationTransform,
    intrinsics: &CameraIntrinsics,
    frames: usize,
    params: &SynthParams,
) -> Result<SynthRecording, IoError> {
    intrinsics.validate()?;
    if params.anchor_joints.len() != chain.dof() {
        return Err(IoError::Config(format!(
            "anchor has {} joints but the chain has {}",
            params.anchor_joints.len(),
            chain.dof()
        )));
    }
    if !(params.fps > 0.0 && params.depth_scale > 0.0) || params.cycle_frames == 0 {
        return Err(IoError::Config("fps, depth scale and cycle length must be positive".into()));
    }
    let anchor = chain
        .forward_kinematics(&params.anchor_joints)
        .map_err(|e| IoError::Config(e.to_string()))?;
    let p0 = anchor.translation.vector;
    let rot = anchor.rotation.to_rotation_matrix().into_inner();
    let radial = Vector3::new(p0.x, p0.y, 0.0)
        .try_normalize(1e-9)
        .unwrap_or_else(Vector3::x);

    let mut out = SynthRecording {
        scenario,
        intrinsics: *intrinsics,
        depth_scale: params.depth_scale,
        fps: params.fps,
        landmarks: Vec::with_capacity(frames),
        ground_truth: Vec::with_capacity(frames),
        opening_angles: Vec::with_capacity(frames),
        camera_points: Vec::with_capacity(frames),
        splat_radius_px: params.splat_radius_px,
    };
    let max_raw = u16::MAX as f64 / params.depth_scale;
    for i in 0..frames {
        let (p, spread) = match scenario {
            Scenario::StaticGrasp => (p0, 0.0),
            Scenario::LineSweep => {
                let s = if frames > 1 {
                    -1.0 + 2.0 * i as f64 / (frames - 1) as f64
                } else {
                    0.0
                };
                (p0 + s * params.sweep_half_length_m * radial, 0.0)
            }
            Scenario::GraspCycle => {
                let phase = std::f64::consts::TAU * i as f64 / params.cycle_frames as f64;
                (p0, params.spread_mean_rad + params.spread_amplitude_rad * phase.sin())
            }
        };
        let hand = hand_landmarks(&p, &rot, spread, params);
        let mut pixels = [[0.0; 2]; LANDMARK_COUNT];
        let mut cam = [Vector3::zeros(); LANDMARK_COUNT];
        for (j, x) in hand.iter().enumerate() {
            let pc = calibration.robot_to_camera(&Point3::robot(x.x, x.y, x.z))?;
            let z = pc.z();
            if !(z >= DEPTH_RANGE_M.0 && z <= DEPTH_RANGE_M.1 && z <= max_raw) {
                return Err(IoError::Unreachable(format!(
                    "frame {i}: landmark {} at depth {z:.3} m",
                    LandmarkId::new(j).expect("index below 21")
                )));
            }
            let (u, v) = project(&pc, intrinsics)?;
            if !(u >= 0.0 && v >= 0.0 && u <= intrinsics.width as f64 - 1.0 && v <= intrinsics.height as f64 - 1.0) {
                return Err(IoError::Unreachable(format!(
                    "frame {i}: landmark {} projects to ({u:.1}, {v:.1})",
                    LandmarkId::new(j).expect("index below 21")
                )));
            }
            pixels[j] = [u, v];
            cam[j] = pc.coords;
        }
        out.landmarks.push(LandmarkFrame {
            timestamp: i as f64 / params.fps,
            handedness: Handedness::Right,
            pixels,
            pixel_valid: [true; LANDMARK_COUNT],
        });
        out.ground_truth.push(TargetPose {
            position: Point3::robot(p.x, p.y, p.z),
            orientation: UnitQuaternion::from_matrix(&rot),
            orientation_source: OrientationSource::Primary,
        });
        out.opening_angles.push(opening_angle(&hand, &p));
        out.camera_points.push(cam);
    }
    Ok(out)
}
