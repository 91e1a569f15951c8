//! Offline hand-to-robot retargeting.
//!
//! A recorded stream of 2D hand landmarks plus aligned depth rasters is
//! lifted into 3D, mapped into the robot base frame, turned into an
//! end-effector target and gripper aperture, and solved into joint commands
//! for a serial arm with damped least squares.

pub mod geometry;
pub mod gripper;
pub mod handmodel;
pub mod io;
pub mod kinematics;
pub mod pipeline;
pub mod retarget;
pub mod rotation;

pub use geometry::{CalibrationTransform, CameraIntrinsics, DepthFrame, Frame, Point3};
pub use gripper::{GripperMode, GripperParams};
pub use handmodel::{Handedness, LandmarkFrame, LandmarkId};
pub use kinematics::{IkParams, KinematicChain};
pub use pipeline::{process_stream, JointCommand, Pipeline, PipelineConfig};
pub use retarget::TargetPose;
