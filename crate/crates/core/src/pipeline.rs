//! Per-frame retargeting pipeline with per-stage latency tracking.
//!
//! Stages run in a fixed order: frame input, hand landmark smoothing,
//! depth deprojection, camera-to-robot transform, then IK and gripper.
//! Each stage is timed; a frame rejected by one stage never enters the
//! next, so later stages may have fewer samples than earlier ones.

use std::fmt::{self, Write as _};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    deproject_landmarks, gripper_depth_fallback, CalibrationTransform, CameraIntrinsics, Point3,
};
use crate::gripper::{apply_gripper_mode, gripper_with_fallback, GripperParams, GripperState};
use crate::handmodel::{frame_acceptance, Acceptance, Handedness, SmoothingState2D, LANDMARK_COUNT};
use crate::io::{IoError, RecordedFrame};
use crate::kinematics::{
    ema_smooth_joints, safety_check, solve_ik, IkParams, IkReport, JointLimits, KinematicChain,
    Safety, DEFAULT_JOINT_ALPHA, Z_FLOOR_M,
};
use crate::retarget::{target_pose, HandPoints3D, RetargetError, TargetPose};
use crate::kinematics::roundtrip::percentile;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] IoError),
    #[error("angle {0} is not finite")]
    NonFinite(usize),
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CameraInput,
    HandDetection,
    DepthDeprojection,
    CoordTransform,
    IkGripper,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::CameraInput,
        Stage::HandDetection,
        Stage::DepthDeprojection,
        Stage::CoordTransform,
        Stage::IkGripper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CameraInput => "camera_input",
            Stage::HandDetection => "hand_detection",
            Stage::DepthDeprojection => "depth_deprojection",
            Stage::CoordTransform => "coord_transform",
            Stage::IkGripper => "ik_gripper",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why a frame did not produce a fresh solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    OtherHand,
    TooFewValidLandmarks,
    MissingLandmarks,
    DegenerateGeometry,
    BelowZFloor,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::OtherHand => "other_hand",
            RejectReason::TooFewValidLandmarks => "too_few_valid_landmarks",
            RejectReason::MissingLandmarks => "missing_landmarks",
            RejectReason::DegenerateGeometry => "degenerate_geometry",
            RejectReason::BelowZFloor => "below_z_floor",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandStatus {
    Solved,
    HeldLastValid(RejectReason),
    /// No earlier command exists to hold.
    Rejected(RejectReason),
}

impl CommandStatus {
    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            CommandStatus::Solved => None,
            CommandStatus::HeldLastValid(r) | CommandStatus::Rejected(r) => Some(*r),
        }
    }
}

/// One emitted trajectory record.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCommand {
    pub timestamp: f64,
    pub status: CommandStatus,
    pub arm_angles: Vec<f64>,
    pub gripper_angle: f64,
    /// Arm joints then gripper, each in `[0, 1]`.
    pub normalized: Vec<f64>,
    /// Arm joints in `[-100, 100]`, gripper in `[0, 100]`.
    pub motor: Vec<f64>,
    pub gripper_level: Option<u8>,
    pub ik_iterations: usize,
    /// Absent when no solution was ever computed.
    pub ik_residual: Option<f64>,
}

impl JointCommand {
    /// Arm angles followed by the gripper angle.
    pub fn angles(&self) -> Vec<f64> {
        let mut a = self.arm_angles.clone();
        a.push(self.gripper_angle);
        a
    }
}

/// Normalises arm and gripper angles by their joint ranges and maps them to
/// motor units: `(a − 0.5)·200` for the arm, `a·100` for the gripper.
pub fn normalize_and_map(
    arm: &[f64],
    gripper: f64,
    arm_limits: &[JointLimits],
    gripper_limits: JointLimits,
) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
    let mut normalized = Vec::with_capacity(arm.len() + 1);
    let mut motor = Vec::with_capacity(arm.len() + 1);
    let norm = |a: f64, l: &JointLimits| ((a - l.min) / l.range()).clamp(0.0, 1.0);
    for (i, (a, l)) in arm.iter().zip(arm_limits).enumerate() {
        if !a.is_finite() {
            return Err(PipelineError::NonFinite(i));
        }
        let n = norm(*a, l);
        normalized.push(n);
        motor.push((n - 0.5) * 200.0);
    }
    if !gripper.is_finite() {
        return Err(PipelineError::NonFinite(arm.len()));
    }
    let n = norm(gripper, &gripper_limits);
    normalized.push(n);
    motor.push(n * 100.0);
    Ok((normalized, motor))
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub chain: KinematicChain,
    pub calibration: CalibrationTransform,
    pub landmark_alpha: f64,
    pub joint_alpha: f64,
    pub ik: IkParams,
    pub gripper: GripperParams,
    pub handedness: Handedness,
    pub z_floor: f64,
}

impl PipelineConfig {
    pub fn new(intrinsics: CameraIntrinsics, chain: KinematicChain) -> Self {
        Self {
            intrinsics,
            chain,
            calibration: CalibrationTransform::preset(),
            landmark_alpha: crate::handmodel::DEFAULT_LANDMARK_ALPHA,
            joint_alpha: DEFAULT_JOINT_ALPHA,
            ik: IkParams::default(),
            gripper: GripperParams::default(),
            handedness: Handedness::Right,
            z_floor: Z_FLOOR_M,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn fmt::Display| PipelineError::Config(e.to_string());
        self.intrinsics.validate().map_err(|e| cfg(&e))?;
        self.ik.validate().map_err(|e| cfg(&e))?;
        self.gripper.validate().map_err(|e| cfg(&e))?;
        if self.chain.gripper().is_none() {
            return Err(PipelineError::Config(
                "chain has no gripper joint to normalise against".into(),
            ));
        }
        for (name, a) in [("landmark_alpha", self.landmark_alpha), ("joint_alpha", self.joint_alpha)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(PipelineError::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        if !self.z_floor.is_finite() {
            return Err(PipelineError::Config("z_floor must be finite".into()));
        }
        Ok(())
    }
}

/// Latency samples of one stage, microseconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageReport {
    pub stage: Option<Stage>,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub samples: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl StageReport {
    pub fn summary(&self, stage: Stage) -> StageSummary {
        let n = self.samples.len();
        let mut sorted = self.samples.clone();
        sorted.sort_by(f64::total_cmp);
        StageSummary {
            stage,
            samples: n,
            mean_us: if n == 0 { 0.0 } else { sorted.iter().sum::<f64>() / n as f64 },
            p50_us: percentile(&sorted, 0.5),
            p95_us: percentile(&sorted, 0.95),
            max_us: sorted.last().copied().unwrap_or(0.0),
        }
    }
}

/// Per-stage latency samples plus per-frame totals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyReport {
    stages: [Vec<f64>; Stage::ALL.len()],
    frame_totals: Vec<f64>,
}

impl LatencyReport {
    pub fn samples(&self, stage: Stage) -> &[f64] {
        &self.stages[stage.slot()]
    }

    pub fn frame_totals(&self) -> &[f64] {
        &self.frame_totals
    }

    pub fn frames(&self) -> usize {
        self.frame_totals.len()
    }

    pub fn record(&mut self, stage: Stage, micros: f64) {
        self.stages[stage.slot()].push(micros);
        if let Some(t) = self.frame_totals.last_mut() {
            *t += micros;
        }
    }

    fn begin_frame(&mut self) {
        self.frame_totals.push(0.0);
    }

    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64() * 1e6);
        out
    }

    pub fn stage_reports(&self) -> Vec<StageReport> {
        Stage::ALL
            .iter()
            .map(|s| StageReport {
                stage: Some(*s),
                samples: self.stages[s.slot()].clone(),
            })
            .collect()
    }

    /// Summaries of every stage that saw at least one frame, in stage order.
    pub fn summaries(&self) -> Vec<StageSummary> {
        Stage::ALL
            .iter()
            .filter(|s| !self.stages[s.slot()].is_empty())
            .map(|s| {
                StageReport {
                    stage: Some(*s),
                    samples: self.stages[s.slot()].clone(),
                }
                .summary(*s)
            })
            .collect()
    }

    /// Mean end-to-end time per frame; 0 without frames.
    pub fn total_mean_us(&self) -> f64 {
        if self.frame_totals.is_empty() {
            0.0
        } else {
            self.frame_totals.iter().sum::<f64>() / self.frame_totals.len() as f64
        }
    }

    pub fn sidecar(&self) -> LatencySidecar {
        LatencySidecar {
            frames: self.frames(),
            total_mean_us: self.total_mean_us(),
            stages: self.summaries(),
        }
    }
}

/// Machine-readable latency summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySidecar {
    pub frames: usize,
    pub total_mean_us: f64,
    pub stages: Vec<StageSummary>,
}

/// Human-readable latency table.
pub fn latency_report(report: &LatencyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>8} {:>12} {:>12} {:>12} {:>12}",
        "stage", "samples", "mean_us", "p50_us", "p95_us", "max_us"
    );
    for s in report.summaries() {
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>12.1} {:>12.1} {:>12.1} {:>12.1}",
            s.stage.name(),
            s.samples,
            s.mean_us,
            s.p50_us,
            s.p95_us,
            s.max_us
        );
    }
    let _ = writeln!(
        out,
        "{:<20} {:>8} {:>12.1}",
        "total/frame",
        report.frames(),
        report.total_mean_us()
    );
    out
}

/// Diagnostics of one frame, alongside its command.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameTrace {
    pub valid_landmarks: usize,
    pub target: Option<TargetPose>,
    pub ik: Option<IkReport>,
}

#[derive(Debug, Clone, Default)]
pub struct StreamOutput {
    pub commands: Vec<JointCommand>,
    pub traces: Vec<FrameTrace>,
    pub latency: LatencyReport,
}

impl StreamOutput {
    pub fn count(&self, pred: impl Fn(&CommandStatus) -> bool) -> usize {
        self.commands.iter().filter(|c| pred(&c.status)).count()
    }
}

/// Stateful single-stream processor.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    smoother: SmoothingState2D,
    gripper_state: GripperState,
    previous_joints: Option<Vec<f64>>,
    last_command: Option<JointCommand>,
    arm_limits: Vec<JointLimits>,
    gripper_limits: JointLimits,
    latency: LatencyReport,
}

enum Outcome {
    Solved {
        arm: Vec<f64>,
        gripper: f64,
        level: u8,
        ik: IkReport,
    },
    Failed(RejectReason),
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let smoother = SmoothingState2D::new(config.landmark_alpha)
            .ok_or_else(|| PipelineError::Config("landmark_alpha must lie in (0, 1]".into()))?;
        let arm_limits = config.chain.limits();
        let gripper_limits = config.chain.gripper().expect("validated").limits;
        Ok(Self {
            config,
            smoother,
            gripper_state: GripperState::default(),
            previous_joints: None,
            last_command: None,
            arm_limits,
            gripper_limits,
            latency: LatencyReport::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn latency(&self) -> &LatencyReport {
        &self.latency
    }

    pub fn into_latency(self) -> LatencyReport {
        self.latency
    }

    /// Processes one frame whose input latency was already measured.
    pub fn process_frame(
        &mut self,
        frame: &RecordedFrame,
        input_us: f64,
    ) -> Result<(JointCommand, FrameTrace), PipelineError> {
        frame
            .depth
            .check_matches(&self.config.intrinsics)
            .map_err(|e| PipelineError::Format(IoError::Geometry(e)))?;
        self.latency.begin_frame();
        self.latency.record(Stage::CameraInput, input_us);
        let mut trace = FrameTrace::default();
        let outcome = self.run_stages(frame, &mut trace)?;
        let command = self.emit(frame.landmarks.timestamp, outcome)?;
        self.last_command = Some(command.clone());
        Ok((command, trace))
    }

    fn run_stages(&mut self, frame: &RecordedFrame, trace: &mut FrameTrace) -> Result<Outcome, PipelineError> {
        let cfg = &self.config;

        let smoother = &mut self.smoother;
        let smoothed = self.latency.time(Stage::HandDetection, || {
            (frame.landmarks.handedness == cfg.handedness)
                .then(|| smoother.ema_smooth_2d(&frame.landmarks))
        });
        let Some(smoothed) = smoothed else {
            return Ok(Outcome::Failed(RejectReason::OtherHand));
        };

        let camera_points = self.latency.time(Stage::DepthDeprojection, || {
            let pts = deproject_landmarks(&smoothed, &frame.depth, &cfg.intrinsics);
            let valid = pts.iter().filter(|p| p.is_some()).count();
            let accepted = frame_acceptance(valid) == Acceptance::Accept;
            let pts = accepted.then(|| gripper_depth_fallback(&pts, &smoothed, &cfg.intrinsics));
            (valid, pts)
        });
        trace.valid_landmarks = camera_points.0;
        let Some(camera_points) = camera_points.1 else {
            return Ok(Outcome::Failed(RejectReason::TooFewValidLandmarks));
        };

        let hand = self.latency.time(Stage::CoordTransform, || {
            let mut robot: [Option<Point3>; LANDMARK_COUNT] = [None; LANDMARK_COUNT];
            for (out, p) in robot.iter_mut().zip(&camera_points) {
                if let Some(p) = p {
                    *out = Some(cfg.calibration.camera_to_robot(p)?);
                }
            }
            Ok::<_, RetargetError>(HandPoints3D::new(robot)?)
        });
        let hand = hand.map_err(|e| PipelineError::Config(e.to_string()))?;

        let rest = self
            .previous_joints
            .clone()
            .unwrap_or_else(|| cfg.chain.mid_range().0);
        let previous = self.previous_joints.as_deref();
        let gripper_state = &mut self.gripper_state;
        let outcome = self.latency.time(Stage::IkGripper, || -> Result<Outcome, PipelineError> {
            let target = match target_pose(&hand) {
                Ok(t) => t,
                Err(RetargetError::MissingLandmarks(_)) => {
                    return Ok(Outcome::Failed(RejectReason::MissingLandmarks))
                }
                Err(_) => return Ok(Outcome::Failed(RejectReason::DegenerateGeometry)),
            };
            trace.target = Some(target);
            if safety_check(&target, cfg.z_floor) == Safety::Rejected {
                return Ok(Outcome::Failed(RejectReason::BelowZFloor));
            }
            let sol = solve_ik(&cfg.chain, &target, &rest, &cfg.ik)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            trace.ik = Some(sol.report);
            let mut arm = ema_smooth_joints(previous, &sol.joints, cfg.joint_alpha)
                .map_err(|e| PipelineError::Config(e.to_string()))?
                .0;
            cfg.chain.clamp(&mut arm);
            let (phi, level) =
                gripper_with_fallback(&hand, &target.position, gripper_state, &cfg.gripper);
            Ok(Outcome::Solved {
                arm,
                gripper: apply_gripper_mode(phi, &cfg.gripper),
                level: level.number(),
                ik: sol.report,
            })
        })?;
        Ok(outcome)
    }

    fn emit(&mut self, timestamp: f64, outcome: Outcome) -> Result<JointCommand, PipelineError> {
        match outcome {
            Outcome::Solved {
                arm,
                gripper,
                level,
                ik,
            } => {
                let (normalized, motor) =
                    normalize_and_map(&arm, gripper, &self.arm_limits, self.gripper_limits)?;
                self.previous_joints = Some(arm.clone());
                Ok(JointCommand {
                    timestamp,
                    status: CommandStatus::Solved,
                    arm_angles: arm,
                    gripper_angle: gripper,
                    normalized,
                    motor,
                    gripper_level: Some(level),
                    ik_iterations: ik.iterations,
                    ik_residual: Some(ik.final_residual),
                })
            }
            Outcome::Failed(reason) => match &self.last_command {
                Some(last) if !matches!(last.status, CommandStatus::Rejected(_)) => Ok(JointCommand {
                    timestamp,
                    status: CommandStatus::HeldLastValid(reason),
                    ik_iterations: 0,
                    ..last.clone()
                }),
                _ => {
                    let arm = self.config.chain.mid_range().0;
                    let gripper = self.config.gripper.mid_open();
                    let (normalized, motor) =
                        normalize_and_map(&arm, gripper, &self.arm_limits, self.gripper_limits)?;
                    Ok(JointCommand {
                        timestamp,
                        status: CommandStatus::Rejected(reason),
                        arm_angles: arm,
                        gripper_angle: gripper,
                        normalized,
                        motor,
                        gripper_level: None,
                        ik_iterations: 0,
                        ik_residual: None,
                    })
                }
            },
        }
    }
}

/// Runs a whole recording through a fresh [`Pipeline`].
///
/// Load failures abort the stream; per-frame rejections never do.
pub fn process_stream<I>(frames: I, config: PipelineConfig) -> Result<StreamOutput, PipelineError>
where
    I: IntoIterator<Item = Result<RecordedFrame, IoError>>,
{
    let mut pipeline = Pipeline::new(config)?;
    let mut out = StreamOutput::default();
    let mut iter = frames.into_iter();
    let mut last_ts = f64::NEG_INFINITY;
    loop {
        let start = Instant::now();
        let Some(frame) = iter.next() else { break };
        let frame = frame?;
        let input_us = start.elapsed().as_secs_f64() * 1e6;
        let ts = frame.landmarks.timestamp;
        if !(ts >= last_ts) {
            return Err(PipelineError::Format(IoError::Format {
                path: None,
                line: Some(out.commands.len() + 1),
                message: format!("timestamp {ts} is earlier than the previous frame"),
            }));
        }
        last_ts = ts;
        let (cmd, trace) = pipeline.process_frame(&frame, input_us)?;
        out.commands.push(cmd);
        out.traces.push(trace);
    }
    out.latency = pipeline.into_latency();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn so_limits() -> (Vec<JointLimits>, JointLimits) {
        let c = KinematicChain::so_arm101();
        (c.limits(), c.gripper().unwrap().limits)
    }

    #[test]
    fn motor_mapping() {
        let (arm, grip) = so_limits();
        let mid: Vec<f64> = arm.iter().map(|l| l.mid()).collect();
        let (n, m) = normalize_and_map(&mid, grip.mid(), &arm, grip).unwrap();
        assert!(n.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(m[..5].iter().all(|v| v.abs() < 1e-9));
        assert!((m[5] - 50.0).abs() < 1e-9);

        let max: Vec<f64> = arm.iter().map(|l| l.max).collect();
        let (n, m) = normalize_and_map(&max, grip.max, &arm, grip).unwrap();
        assert!(n.iter().all(|v| *v == 1.0));
        assert!(m[..5].iter().all(|v| *v == 100.0));
        assert_eq!(m[5], 100.0);

        let min: Vec<f64> = arm.iter().map(|l| l.min).collect();
        let (_, m) = normalize_and_map(&min, grip.min, &arm, grip).unwrap();
        assert!(m[..5].iter().all(|v| *v == -100.0));
        assert_eq!(m[5], 0.0);
    }

    #[test]
    fn shoulder_pan_extremes() {
        let (arm, grip) = so_limits();
        let mut q: Vec<f64> = arm.iter().map(|l| l.mid()).collect();
        q[0] = 1.920;
        let (n, m) = normalize_and_map(&q, 0.5, &arm, grip).unwrap();
        assert_eq!((n[0], m[0]), (1.0, 100.0));
        q[0] = -1.920;
        let (n, m) = normalize_and_map(&q, 0.5, &arm, grip).unwrap();
        assert_eq!((n[0], m[0]), (0.0, -100.0));
    }

    #[test]
    fn out_of_range_clamps_and_nan_fails() {
        let (arm, grip) = so_limits();
        let mut q = vec![0.0; 5];
        q[1] = 10.0;
        let (n, m) = normalize_and_map(&q, 5.0, &arm, grip).unwrap();
        assert_eq!(n[1], 1.0);
        assert_eq!(m[5], 100.0);
        q[2] = f64::NAN;
        assert!(matches!(
            normalize_and_map(&q, 0.0, &arm, grip),
            Err(PipelineError::NonFinite(2))
        ));
    }

    #[test]
    fn latency_additivity() {
        let mut r = LatencyReport::default();
        assert_eq!(r.total_mean_us(), 0.0);
        assert!(r.summaries().is_empty());
        for _ in 0..4 {
            r.begin_frame();
            r.record(Stage::CameraInput, 1000.0);
            r.record(Stage::HandDetection, 2000.0);
        }
        assert!((r.total_mean_us() - 3000.0).abs() < 1e-9);
        let s = r.summaries();
        assert_eq!(s.iter().map(|x| x.stage).collect::<Vec<_>>(), [Stage::CameraInput, Stage::HandDetection]);
        assert_eq!(s[1].p95_us, 2000.0);
        let table = latency_report(&r);
        assert!(table.find("camera_input").unwrap() < table.find("hand_detection").unwrap());
    }

    #[test]
    fn stage_order_follows_pipeline() {
        let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(
            names,
            ["camera_input", "hand_detection", "depth_deprojection", "coord_transform", "ik_gripper"]
        );
        assert!(Stage::ALL.windows(2).all(|w| w[0] < w[1]));
    }
}
