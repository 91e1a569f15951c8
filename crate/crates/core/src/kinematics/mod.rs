//! Serial-chain model of the arm: forward kinematics, geometric Jacobian,
//! damped least-squares IK and joint-space smoothing.

mod ik;
pub mod roundtrip;

use std::ops::{Deref, DerefMut};

use nalgebra::{Isometry3, Matrix6xX, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::rotation::{matrix_from_rpy, quaternion_from_matrix};

pub use ik::{
    ema_smooth_joints, pose_error, safety_check, solve_ik, IkParams, IkReport, IkSolution, Safety,
    DEFAULT_JOINT_ALPHA, MIN_DAMPING, Z_FLOOR_M,
};

const AXIS_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint vector has {found} entries, chain has {expected} joints")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("joint angle for {0} is not finite")]
    NonFinite(String),
}

/// Joint angles in radians, one per chain joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

impl Deref for JointVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub min: f64,
    pub max: f64,
}

impl JointLimits {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.min, self.max)
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// A fixed transform given as URDF-style `xyz` + `rpy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Origin {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn translation(xyz: [f64; 3]) -> Self {
        Self { xyz, rpy: [0.0; 3] }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.xyz)),
            quaternion_from_matrix(&matrix_from_rpy(self.rpy)),
        )
    }
}

/// One revolute joint of the arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Transform from the parent link frame to this joint's frame.
    pub origin: Origin,
    /// Rotation axis in the joint frame.
    pub axis: Unit<Vector3<f64>>,
    pub limits: JointLimits,
    /// Raw damping as configured; see [`Joint::effective_damping`].
    pub damping: f64,
    frame: Isometry3<f64>,
}

impl Joint {
    pub fn new(
        name: impl Into<String>,
        origin: Origin,
        axis: [f64; 3],
        limits: JointLimits,
        damping: f64,
    ) -> Result<Self, KinematicsError> {
        let name = name.into();
        let v = Vector3::from(axis);
        if (v.norm() - 1.0).abs() > AXIS_NORM_TOL {
            return Err(KinematicsError::InvalidChain(format!(
                "axis of joint {name} is not unit length"
            )));
        }
        if !(limits.min < limits.max) {
            return Err(KinematicsError::InvalidChain(format!(
                "joint {name} has min >= max"
            )));
        }
        if !(damping >= 0.0) {
            return Err(KinematicsError::InvalidChain(format!(
                "joint {name} has negative damping"
            )));
        }
        Ok(Self {
            name,
            frame: origin.isometry(),
            origin,
            axis: Unit::new_unchecked(v),
            limits,
            damping,
        })
    }

    /// Damping used by the solver, floored at [`MIN_DAMPING`].
    pub fn effective_damping(&self) -> f64 {
        self.damping.max(MIN_DAMPING)
    }

    fn motion(&self, angle: f64) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&self.axis, angle),
        )
    }
}

/// The gripper jaw: limits only, it does not move the end-effector frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GripperJoint {
    pub name: String,
    pub limits: JointLimits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    end_effector: Origin,
    ee_frame: Isometry3<f64>,
    gripper: Option<GripperJoint>,
}

/// Joint origins and world-frame axes at one configuration.
#[derive(Debug, Clone)]
pub struct JointFrames {
    pub origins: Vec<Vector3<f64>>,
    pub axes: Vec<Vector3<f64>>,
    pub end_effector: Isometry3<f64>,
}

impl KinematicChain {
    pub fn new(
        joints: Vec<Joint>,
        end_effector: Origin,
        gripper: Option<GripperJoint>,
    ) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        if let Some(g) = &gripper {
            if !(g.limits.min < g.limits.max) {
                return Err(KinematicsError::InvalidChain(
                    "gripper has min >= max".into(),
                ));
            }
        }
        Ok(Self {
            joints,
            ee_frame: end_effector.isometry(),
            end_effector,
            gripper,
        })
    }

    /// Approximate SO-ARM101 follower arm.
    ///
    /// Joint names, order and limits are those of the real arm. Link
    /// offsets are rough measurements and should be replaced by the URDF
    /// values for any hardware use. At zero pan the arm reaches along −y
    /// (away from the base, towards the operator's workspace); the
    /// end-effector frame sits between the jaws with its y axis along the
    /// approach direction.
    pub fn so_arm101() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let j = |name: &str, origin: Origin, axis: [f64; 3], min: f64, max: f64| {
            Joint::new(name, origin, axis, JointLimits::new(min, max), 0.0).expect("valid preset")
        };
        let joints = vec![
            j(
                "shoulder_pan",
                Origin {
                    xyz: [0.0, 0.0, 0.0624],
                    rpy: [0.0, 0.0, -FRAC_PI_2],
                },
                [0.0, 0.0, 1.0],
                -1.920,
                1.920,
            ),
            j(
                "shoulder_lift",
                Origin::translation([0.0304, 0.0, 0.0542]),
                [0.0, 1.0, 0.0],
                -1.745,
                1.745,
            ),
            j(
                "elbow_flex",
                Origin::translation([0.028, 0.0, 0.1126]),
                [0.0, 1.0, 0.0],
                -1.745,
                1.571,
            ),
            j(
                "wrist_flex",
                Origin::translation([0.1349, 0.0, 0.0052]),
                [0.0, 1.0, 0.0],
                -1.658,
                1.658,
            ),
            j(
                "wrist_roll",
                Origin::translation([0.0611, 0.0, 0.0]),
                [1.0, 0.0, 0.0],
                -2.793,
                2.793,
            ),
        ];
        let ee = Origin {
            xyz: [0.098, 0.0, 0.0],
            rpy: [0.0, 0.0, -FRAC_PI_2],
        };
        let gripper = GripperJoint {
            name: "gripper".into(),
            limits: JointLimits::new(-0.175, 1.745),
        };
        Self::new(joints, ee, Some(gripper)).expect("valid preset")
    }

    /// Number of arm joints (the gripper is not counted).
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn end_effector(&self) -> &Origin {
        &self.end_effector
    }

    pub fn gripper(&self) -> Option<&GripperJoint> {
        self.gripper.as_ref()
    }

    pub fn limits(&self) -> Vec<JointLimits> {
        self.joints.iter().map(|j| j.limits).collect()
    }

    /// Mid-range configuration.
    pub fn mid_range(&self) -> JointVector {
        JointVector(self.joints.iter().map(|j| j.limits.mid()).collect())
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (a, j) in q.iter_mut().zip(&self.joints) {
            *a = j.limits.clamp(*a);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof() && q.iter().zip(&self.joints).all(|(a, j)| j.limits.contains(*a))
    }

    fn check_len(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.dof(),
                found: q.len(),
            });
        }
        Ok(())
    }

    /// End-effector pose in the base frame.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Isometry3<f64>, KinematicsError> {
        self.check_len(q)?;
        let mut t = Isometry3::identity();
        for (joint, &angle) in self.joints.iter().zip(q) {
            t = t * joint.frame * joint.motion(angle);
        }
        let mut pose = t * self.ee_frame;
        pose.rotation.renormalize();
        Ok(pose)
    }

    pub fn joint_frames(&self, q: &[f64]) -> Result<JointFrames, KinematicsError> {
        self.check_len(q)?;
        let mut t = Isometry3::identity();
        let mut origins = Vec::with_capacity(self.dof());
        let mut axes = Vec::with_capacity(self.dof());
        for (joint, &angle) in self.joints.iter().zip(q) {
            t *= joint.frame;
            origins.push(t.translation.vector);
            axes.push(t.rotation * joint.axis.into_inner());
            t *= joint.motion(angle);
        }
        Ok(JointFrames {
            origins,
            axes,
            end_effector: t * self.ee_frame,
        })
    }

    /// Geometric Jacobian, linear rows first: column `i` is
    /// `[z_i × (p_ee − p_i); z_i]`.
    pub fn jacobian(&self, q: &[f64]) -> Result<Matrix6xX<f64>, KinematicsError> {
        let frames = self.joint_frames(q)?;
        let p_ee = frames.end_effector.translation.vector;
        let mut jac = Matrix6xX::zeros(self.dof());
        for (i, (z, p)) in frames.axes.iter().zip(&frames.origins).enumerate() {
            let lin = z.cross(&(p_ee - p));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(z);
        }
        Ok(jac)
    }
}
