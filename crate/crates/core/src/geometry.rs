//! Pinhole camera model, depth deprojection and the camera-to-robot transform.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handmodel::{LandmarkFrame, LandmarkId, LANDMARK_COUNT};
use crate::rotation::orthonormality_error;

/// Default raw-depth divisor (millimetres to metres).
pub const DEFAULT_DEPTH_SCALE: f64 = 1000.0;
/// Accepted metric depth range, inclusive.
pub const DEPTH_RANGE_M: (f64, f64) = (0.1, 5.0);
/// Camera mounting angle of the shipped calibration preset.
pub const PRESET_MOUNT_ANGLE_DEG: f64 = 50.0;
/// Camera translation of the shipped calibration preset, metres.
pub const PRESET_CAMERA_TRANSLATION: [f64; 3] = [0.04, -0.049, 0.48];

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) is outside the {width}x{height} raster")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("expected a point in the {expected} frame, got {found}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth raster is {found_w}x{found_h}, intrinsics expect {width}x{height}")]
    RasterSize {
        width: u32,
        height: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("{0} is not a proper rotation")]
    NotARotation(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be non-zero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie in [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie in [0, height)");
        }
        Ok(())
    }
}

/// A 16-bit depth raster in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    /// Divisor turning raw values into metres.
    pub scale: f64,
    pub valid_range: (f64, f64),
    pub raster: Vec<u16>,
}

impl DepthFrame {
    /// A raster filled with zeros (no sensor return anywhere).
    pub fn empty(width: u32, height: u32, scale: f64) -> Self {
        Self {
            width,
            height,
            scale,
            valid_range: DEPTH_RANGE_M,
            raster: vec![0; width as usize * height as usize],
        }
    }

    pub fn raw(&self, col: u32, row: u32) -> u16 {
        self.raster[row as usize * self.width as usize + col as usize]
    }

    pub fn set_raw(&mut self, col: u32, row: u32, value: u16) {
        let w = self.width as usize;
        self.raster[row as usize * w + col as usize] = value;
    }

    /// Nearest integer pixel for continuous coordinates, if inside the raster.
    pub fn pixel_index(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        let (c, r) = (u.round(), v.round());
        if !(c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64) {
            return None;
        }
        Some((c as u32, r as u32))
    }

    /// Metric depth at the rounded pixel, or `None` for no-return or
    /// out-of-range values.
    pub fn metric_depth(&self, col: u32, row: u32) -> Option<f64> {
        let raw = self.raw(col, row);
        if raw == 0 {
            return None;
        }
        let z = raw as f64 / self.scale;
        (z >= self.valid_range.0 && z <= self.valid_range.1).then_some(z)
    }

    pub fn check_matches(&self, k: &CameraIntrinsics) -> Result<(), GeometryError> {
        if self.width != k.width || self.height != k.height {
            return Err(GeometryError::RasterSize {
                width: k.width,
                height: k.height,
                found_w: self.width,
                found_h: self.height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    Camera,
    Robot,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Camera => f.write_str("camera"),
            Frame::Robot => f.write_str("robot"),
        }
    }
}

/// A point in metres, tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub coords: Vector3<f64>,
    pub frame: Frame,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, frame: Frame) -> Self {
        Self {
            coords: Vector3::new(x, y, z),
            frame,
        }
    }

    pub fn camera(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, y, z, Frame::Camera)
    }

    pub fn robot(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, y, z, Frame::Robot)
    }

    pub fn x(&self) -> f64 {
        self.coords.x
    }

    pub fn y(&self) -> f64 {
        self.coords.y
    }

    pub fn z(&self) -> f64 {
        self.coords.z
    }

    pub fn expect_frame(&self, expected: Frame) -> Result<(), GeometryError> {
        if self.frame != expected {
            return Err(GeometryError::FrameMismatch {
                expected,
                found: self.frame,
            });
        }
        Ok(())
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<(f64, f64), GeometryError> {
    p.expect_frame(Frame::Camera)?;
    if p.z() <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p.z()));
    }
    Ok((k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy))
}

/// Back-projects `(u, v)` along its pixel ray to depth `z`.
pub fn deproject_at_depth(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Point3 {
    Point3::camera((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z)
}

/// Deprojects a landmark pixel using the depth at its nearest raster pixel.
///
/// The depth lookup rounds to the nearest pixel; the ray itself uses the
/// continuous coordinates. Returns `Ok(None)` for missing or out-of-range
/// depth.
pub fn deproject(
    u: f64,
    v: f64,
    depth: &DepthFrame,
    k: &CameraIntrinsics,
) -> Result<Option<Point3>, GeometryError> {
    let (col, row) = depth.pixel_index(u, v).ok_or(GeometryError::OutOfBounds {
        u,
        v,
        width: depth.width,
        height: depth.height,
    })?;
    Ok(depth
        .metric_depth(col, row)
        .map(|z| deproject_at_depth(u, v, z, k)))
}

/// Deprojects every valid landmark of `frame`. Landmarks outside the raster
/// are treated like missing depth.
pub fn deproject_landmarks(
    frame: &LandmarkFrame,
    depth: &DepthFrame,
    k: &CameraIntrinsics,
) -> [Option<Point3>; LANDMARK_COUNT] {
    let mut out = [None; LANDMARK_COUNT];
    for id in LandmarkId::all() {
        if let Some([u, v]) = frame.pixel(id) {
            out[id.index()] = deproject(u, v, depth, k).ok().flatten();
        }
    }
    out
}

/// Rebuilds one gripper-defining MCP from the other's depth.
///
/// Applies only when exactly one of THUMB_MCP / INDEX_FINGER_MCP has depth.
/// The missing one is re-deprojected along its own pixel ray at the donor's
/// depth; it stays missing if its pixel is not known either.
pub fn gripper_depth_fallback(
    points: &[Option<Point3>; LANDMARK_COUNT],
    frame: &LandmarkFrame,
    k: &CameraIntrinsics,
) -> [Option<Point3>; LANDMARK_COUNT] {
    let mut out = *points;
    let thumb = LandmarkId::THUMB_MCP;
    let index = LandmarkId::INDEX_FINGER_MCP;
    let (missing, donor) = match (points[thumb.index()], points[index.index()]) {
        (None, Some(d)) => (thumb, d),
        (Some(d), None) => (index, d),
        _ => return out,
    };
    if let Some([u, v]) = frame.pixel(missing) {
        out[missing.index()] = Some(deproject_at_depth(u, v, donor.z(), k));
    }
    out
}

/// Camera rotation for a mount tilted by `theta` radians.
///
/// The x axis is negated (the image is mirrored) and the remaining block
/// maps the downward-looking optical axis into the robot's forward/up plane.
pub fn build_camera_rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(-1.0, 0.0, 0.0, 0.0, s, -c, 0.0, -c, -s)
}

/// Rigid map from the camera frame to the robot base frame, composed from
/// the camera mount transform and an optional URDF base offset.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTransform {
    pub r_cam: Matrix3<f64>,
    pub t_cam: Vector3<f64>,
    pub r_urdf: Matrix3<f64>,
    pub t_urdf: Vector3<f64>,
    pub theta_mount: Option<f64>,
    r_final: Matrix3<f64>,
    t_final: Vector3<f64>,
}

impl CalibrationTransform {
    pub fn new(
        r_cam: Matrix3<f64>,
        t_cam: Vector3<f64>,
        r_urdf: Matrix3<f64>,
        t_urdf: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        check_rotation(&r_cam, "R_cam")?;
        check_rotation(&r_urdf, "R_urdf")?;
        let r_final = r_urdf * r_cam;
        let t_final = r_urdf * t_cam + t_urdf;
        Ok(Self {
            r_cam,
            t_cam,
            r_urdf,
            t_urdf,
            theta_mount: None,
            r_final,
            t_final,
        })
    }

    /// Camera mounted at `theta` radians with translation `t_cam`.
    pub fn from_mount(
        theta: f64,
        t_cam: Vector3<f64>,
        r_urdf: Matrix3<f64>,
        t_urdf: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let mut c = Self::new(build_camera_rotation(theta), t_cam, r_urdf, t_urdf)?;
        c.theta_mount = Some(theta);
        Ok(c)
    }

    /// The glasses-mount preset: 50 degree tilt, (0.04, -0.049, 0.48) m,
    /// no URDF offset.
    pub fn preset() -> Self {
        Self::from_mount(
            PRESET_MOUNT_ANGLE_DEG.to_radians(),
            Vector3::from(PRESET_CAMERA_TRANSLATION),
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .expect("preset rotation is orthonormal")
    }

    pub fn identity() -> Self {
        Self::new(
            Matrix3::identity(),
            Vector3::zeros(),
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .expect("identity is a rotation")
    }

    pub fn r_final(&self) -> &Matrix3<f64> {
        &self.r_final
    }

    pub fn t_final(&self) -> &Vector3<f64> {
        &self.t_final
    }

    pub fn camera_to_robot(&self, p: &Point3) -> Result<Point3, GeometryError> {
        p.expect_frame(Frame::Camera)?;
        Ok(Point3 {
            coords: self.r_final * p.coords + self.t_final,
            frame: Frame::Robot,
        })
    }

    /// Inverse map, used to render synthetic recordings.
    pub fn robot_to_camera(&self, p: &Point3) -> Result<Point3, GeometryError> {
        p.expect_frame(Frame::Robot)?;
        Ok(Point3 {
            coords: self.r_final.transpose() * (p.coords - self.t_final),
            frame: Frame::Camera,
        })
    }
}

fn check_rotation(r: &Matrix3<f64>, name: &'static str) -> Result<(), GeometryError> {
    if orthonormality_error(r) > ORTHONORMAL_TOL || (r.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(GeometryError::NotARotation(name));
    }
    Ok(())
}

/// Free-function form of [`CalibrationTransform::camera_to_robot`].
pub fn camera_to_robot(p: &Point3, c: &CalibrationTransform) -> Result<Point3, GeometryError> {
    c.camera_to_robot(p)
}
