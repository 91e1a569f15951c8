//! Kinematic preview of a trajectory: FK per command plus limit, velocity,
//! acceleration and floor checks.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::formats::{StatusTag, TrajectoryRecord};
use super::IoError;
use crate::kinematics::{JointLimits, KinematicChain, Z_FLOOR_M};

pub const DEFAULT_ARM_MAX_VELOCITY: f64 = 4.0;
pub const DEFAULT_ARM_MAX_ACCELERATION: f64 = 40.0;
pub const DEFAULT_GRIPPER_MAX_VELOCITY: f64 = 8.0;
pub const DEFAULT_GRIPPER_MAX_ACCELERATION: f64 = 80.0;

/// Per-joint bounds, arm joints first and the gripper last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayLimits {
    /// rad/s
    pub max_velocity: Vec<f64>,
    /// rad/s²
    pub max_acceleration: Vec<f64>,
}

impl ReplayLimits {
    pub fn for_chain(chain: &KinematicChain) -> Self {
        let mut max_velocity = vec![DEFAULT_ARM_MAX_VELOCITY; chain.dof()];
        let mut max_acceleration = vec![DEFAULT_ARM_MAX_ACCELERATION; chain.dof()];
        if chain.gripper().is_some() {
            max_velocity.push(DEFAULT_GRIPPER_MAX_VELOCITY);
            max_acceleration.push(DEFAULT_GRIPPER_MAX_ACCELERATION);
        }
        Self {
            max_velocity,
            max_acceleration,
        }
    }

    pub fn validate(&self, joints: usize) -> Result<(), IoError> {
        if self.max_velocity.len() != joints || self.max_acceleration.len() != joints {
            return Err(IoError::Config(format!("replay limits must cover {joints} joints")));
        }
        if self
            .max_velocity
            .iter()
            .chain(&self.max_acceleration)
            .any(|v| !(*v > 0.0))
        {
            return Err(IoError::Config("replay limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagKind {
    JointLimit { value: f64, min: f64, max: f64 },
    Velocity { value: f64, limit: f64 },
    Acceleration { value: f64, limit: f64 },
    BelowZFloor { z: f64, floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub frame: usize,
    /// `None` for whole-pose checks such as the floor.
    pub joint: Option<String>,
    #[serde(flatten)]
    pub kind: FlagKind,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "frame {}", self.frame)?;
        if let Some(j) = &self.joint {
            write!(f, " joint {j}")?;
        }
        match self.kind {
            FlagKind::JointLimit { value, min, max } => {
                write!(f, ": angle {value:.4} rad outside [{min:.4}, {max:.4}]")
            }
            FlagKind::Velocity { value, limit } => {
                write!(f, ": velocity {value:.3} rad/s exceeds {limit:.3}")
            }
            FlagKind::Acceleration { value, limit } => {
                write!(f, ": acceleration {value:.3} rad/s^2 exceeds {limit:.3}")
            }
            FlagKind::BelowZFloor { z, floor } => {
                write!(f, ": end effector z {z:.4} m below floor {floor:.3}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub frames: usize,
    /// Leading rejected frames carry no executable command and are skipped.
    pub skipped_leading: usize,
    pub fps: f64,
    /// End-effector position per frame; `None` for skipped frames.
    pub ee_positions: Vec<Option<[f64; 3]>>,
    /// Largest observed |velocity| per joint, rad/s.
    pub peak_velocity: Vec<f64>,
    pub flags: Vec<Flag>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Replays `trajectory` through forward kinematics and checks it.
///
/// Velocity is `|Δq|·fps` between consecutive executed frames and
/// acceleration the second difference times `fps²`; both are flagged at the
/// later frame.
pub fn fk_replay_validate(
    trajectory: &[TrajectoryRecord],
    chain: &KinematicChain,
    limits: &ReplayLimits,
    fps: f64,
    z_floor: f64,
) -> Result<ReplayReport, IoError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(IoError::Config("fps must be positive".into()));
    }
    let mut names: Vec<String> = chain.joints().iter().map(|j| j.name.clone()).collect();
    let mut bounds: Vec<JointLimits> = chain.limits();
    if let Some(g) = chain.gripper() {
        names.push(g.name.clone());
        bounds.push(g.limits);
    }
    let n = names.len();
    limits.validate(n)?;

    let skipped_leading = trajectory
        .iter()
        .take_while(|r| r.status == StatusTag::Rejected)
        .count();
    let mut report = ReplayReport {
        frames: trajectory.len(),
        skipped_leading,
        fps,
        ee_positions: vec![None; skipped_leading],
        peak_velocity: vec![0.0; n],
        flags: Vec::new(),
    };

    let mut history: Vec<&[f64]> = Vec::new();
    for (frame, rec) in trajectory.iter().enumerate().skip(skipped_leading) {
        let q = rec.angles_rad.as_slice();
        if q.len() != n {
            return Err(IoError::Format {
                path: None,
                line: Some(frame + 1),
                message: format!("expected {n} joint angles, found {}", q.len()),
            });
        }
        if q.iter().any(|a| !a.is_finite()) {
            return Err(IoError::Format {
                path: None,
                line: Some(frame + 1),
                message: "non-finite joint angle".into(),
            });
        }
        for (j, (a, b)) in q.iter().zip(&bounds).enumerate() {
            if !b.contains(*a) {
                report.flags.push(Flag {
                    frame,
                    joint: Some(names[j].clone()),
                    kind: FlagKind::JointLimit {
                        value: *a,
                        min: b.min,
                        max: b.max,
                    },
                });
            }
        }
        let ee = chain
            .forward_kinematics(&q[..chain.dof()])
            .map_err(|e| IoError::Config(e.to_string()))?
            .translation
            .vector;
        if ee.z < z_floor {
            report.flags.push(Flag {
                frame,
                joint: None,
                kind: FlagKind::BelowZFloor { z: ee.z, floor: z_floor },
            });
        }
        report.ee_positions.push(Some([ee.x, ee.y, ee.z]));

        if let Some(prev) = history.last() {
            for j in 0..n {
                let vel = (q[j] - prev[j]).abs() * fps;
                report.peak_velocity[j] = report.peak_velocity[j].max(vel);
                if vel > limits.max_velocity[j] {
                    report.flags.push(Flag {
                        frame,
                        joint: Some(names[j].clone()),
                        kind: FlagKind::Velocity {
                            value: vel,
                            limit: limits.max_velocity[j],
                        },
                    });
                }
            }
        }
        if history.len() >= 2 {
            let (p1, p2) = (history[history.len() - 1], history[history.len() - 2]);
            for j in 0..n {
                let acc = (q[j] - 2.0 * p1[j] + p2[j]).abs() * fps * fps;
                if acc > limits.max_acceleration[j] {
                    report.flags.push(Flag {
                        frame,
                        joint: Some(names[j].clone()),
                        kind: FlagKind::Acceleration {
                            value: acc,
                            limit: limits.max_acceleration[j],
                        },
                    });
                }
            }
        }
        history.push(q);
    }
    Ok(report)
}

/// Convenience wrapper using the default floor.
pub fn fk_replay_validate_default(
    trajectory: &[TrajectoryRecord],
    chain: &KinematicChain,
    fps: f64,
) -> Result<ReplayReport, IoError> {
    fk_replay_validate(trajectory, chain, &ReplayLimits::for_chain(chain), fps, Z_FLOOR_M)
}
