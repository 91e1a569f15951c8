//! End-effector target construction from robot-frame hand landmarks.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame, GeometryError, Point3};
use crate::handmodel::{LandmarkId, LANDMARK_COUNT};
use crate::rotation::quaternion_from_matrix;

/// Minimum `‖e1 × d̂‖` for a usable hand frame.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;
const MIN_SEPARATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("missing landmark {0}")]
    MissingLandmarks(LandmarkId),
    #[error("degenerate hand geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Robot-frame landmarks; absent entries had no usable depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPoints3D([Option<Point3>; LANDMARK_COUNT]);

impl HandPoints3D {
    /// Fails if any present point is not robot-frame tagged.
    pub fn new(points: [Option<Point3>; LANDMARK_COUNT]) -> Result<Self, RetargetError> {
        for p in points.iter().flatten() {
            p.expect_frame(Frame::Robot)?;
        }
        Ok(Self(points))
    }

    pub fn get(&self, id: LandmarkId) -> Option<&Point3> {
        self.0[id.index()].as_ref()
    }

    pub fn require(&self, id: LandmarkId) -> Result<Vector3<f64>, RetargetError> {
        self.get(id)
            .map(|p| p.coords)
            .ok_or(RetargetError::MissingLandmarks(id))
    }

    pub fn remove(&mut self, id: LandmarkId) {
        self.0[id.index()] = None;
    }

    pub fn points(&self) -> &[Option<Point3>; LANDMARK_COUNT] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationSource {
    Primary,
    WristFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPose {
    pub position: Point3,
    pub orientation: UnitQuaternion<f64>,
    pub orientation_source: OrientationSource,
}

impl TargetPose {
    pub fn rotation(&self) -> Matrix3<f64> {
        *self.orientation.to_rotation_matrix().matrix()
    }
}

/// Midpoint of the thumb and index MCP joints.
pub fn target_position(h: &HandPoints3D) -> Result<Point3, RetargetError> {
    let thumb = h.require(LandmarkId::THUMB_MCP)?;
    let index = h.require(LandmarkId::INDEX_FINGER_MCP)?;
    Ok(Point3 {
        coords: (thumb + index) / 2.0,
        frame: Frame::Robot,
    })
}

/// Hand frame `[e1 e2 e3]` as a rotation matrix.
///
/// `e1` runs from the thumb MCP to the index MCP, `d̂` is the mean finger
/// direction (or the wrist-to-gripper direction when a fingertip is
/// missing), `e3 = e1 × d̂` normalised and `e2 = e3 × e1`.
pub fn hand_frame(h: &HandPoints3D) -> Result<(Matrix3<f64>, OrientationSource), RetargetError> {
    let thumb_mcp = h.require(LandmarkId::THUMB_MCP)?;
    let index_mcp = h.require(LandmarkId::INDEX_FINGER_MCP)?;
    let span = index_mcp - thumb_mcp;
    let span_norm = span.norm();
    if span_norm < MIN_SEPARATION {
        return Err(RetargetError::DegenerateGeometry("MCP joints coincide"));
    }
    let e1 = span / span_norm;

    let tips = (
        h.get(LandmarkId::THUMB_TIP),
        h.get(LandmarkId::INDEX_FINGER_TIP),
    );
    let (d, source) = match tips {
        (Some(tt), Some(it)) => (
            ((tt.coords - thumb_mcp) + (it.coords - index_mcp)) / 2.0,
            OrientationSource::Primary,
        ),
        _ => {
            let wrist = h.require(LandmarkId::WRIST)?;
            let midpoint = (thumb_mcp + index_mcp) / 2.0;
            (midpoint - wrist, OrientationSource::WristFallback)
        }
    };
    let d_norm = d.norm();
    if d_norm < MIN_SEPARATION {
        return Err(RetargetError::DegenerateGeometry("finger direction vanishes"));
    }
    let d_hat = d / d_norm;

    let cross = e1.cross(&d_hat);
    let cross_norm = cross.norm();
    if cross_norm < DEGENERACY_THRESHOLD {
        return Err(RetargetError::DegenerateGeometry(
            "finger direction parallel to MCP span",
        ));
    }
    let e3 = cross / cross_norm;
    let e2 = e3.cross(&e1);
    Ok((Matrix3::from_columns(&[e1, e2, e3]), source))
}

pub fn target_orientation(
    h: &HandPoints3D,
) -> Result<(UnitQuaternion<f64>, OrientationSource), RetargetError> {
    let (r, source) = hand_frame(h)?;
    Ok((quaternion_from_matrix(&r), source))
}

pub fn target_pose(h: &HandPoints3D) -> Result<TargetPose, RetargetError> {
    let position = target_position(h)?;
    let (orientation, orientation_source) = target_orientation(h)?;
    Ok(TargetPose {
        position,
        orientation,
        orientation_source,
    })
}
