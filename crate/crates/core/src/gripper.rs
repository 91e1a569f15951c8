//! Gripper aperture from thumb/index geometry.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::Point3;
use crate::handmodel::LandmarkId;
use crate::retarget::HandPoints3D;

const MIN_VECTOR_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GripperError {
    #[error("gripper vector has near-zero length")]
    DegenerateVectors,
    #[error("invalid gripper mode {0:?}; expected normal, binary or offset:<rad>")]
    InvalidMode(String),
    #[error("invalid gripper parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GripperMode {
    /// Angle passes through unchanged.
    Normal,
    /// Fully open at or above the threshold, fully closed below.
    Binary,
    /// Adds a fixed offset, then re-clamps to the limits.
    Offset(f64),
}

impl fmt::Display for GripperMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GripperMode::Normal => f.write_str("normal"),
            GripperMode::Binary => f.write_str("binary"),
            GripperMode::Offset(v) => write!(f, "offset:{v}"),
        }
    }
}

impl FromStr for GripperMode {
    type Err = GripperError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "normal" => Ok(Self::Normal),
            "binary" => Ok(Self::Binary),
            other => other
                .strip_prefix("offset:")
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .map(Self::Offset)
                .ok_or_else(|| GripperError::InvalidMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperParams {
    pub phi_min: f64,
    pub phi_max: f64,
    /// Added after the acute clamp for a tighter grip.
    pub calibration_offset: f64,
    pub binary_threshold: f64,
    pub mode: GripperMode,
}

impl Default for GripperParams {
    fn default() -> Self {
        Self {
            phi_min: 0.087,
            phi_max: 1.658,
            calibration_offset: -0.175,
            binary_threshold: 60f64.to_radians(),
            mode: GripperMode::Binary,
        }
    }
}

impl GripperParams {
    pub fn validate(&self) -> Result<(), GripperError> {
        if !(self.phi_min < self.phi_max) {
            return Err(GripperError::InvalidParams("phi_min must be below phi_max"));
        }
        if !(self.binary_threshold > self.phi_min && self.binary_threshold < self.phi_max) {
            return Err(GripperError::InvalidParams(
                "binary threshold must lie inside the gripper limits",
            ));
        }
        Ok(())
    }

    pub fn clamp(&self, phi: f64) -> f64 {
        phi.clamp(self.phi_min, self.phi_max)
    }

    pub fn mid_open(&self) -> f64 {
        0.5 * (self.phi_min + self.phi_max)
    }
}

/// Opening angle between `thumb − target` and `index − target`.
///
/// The raw angle is clamped to `[0, π/2]`, shifted by the calibration
/// offset and finally clamped to `[phi_min, phi_max]`.
pub fn gripper_angle(
    thumb: &Point3,
    index: &Point3,
    target: &Point3,
    params: &GripperParams,
) -> Result<f64, GripperError> {
    let a = thumb.coords - target.coords;
    let b = index.coords - target.coords;
    let (na, nb) = (a.norm(), b.norm());
    if na < MIN_VECTOR_NORM || nb < MIN_VECTOR_NORM {
        return Err(GripperError::DegenerateVectors);
    }
    let cos = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
    let raw = cos.acos().clamp(0.0, FRAC_PI_2);
    Ok(params.clamp(raw + params.calibration_offset))
}

/// Which rung of the fallback ladder produced the angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FallbackLevel {
    Tips = 1,
    Knuckles = 2,
    LastValid = 3,
    MidOpen = 4,
}

impl FallbackLevel {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GripperState {
    pub last_valid_angle: Option<f64>,
    pub level_used: Option<FallbackLevel>,
}

/// Gripper angle with the four-level fallback:
/// fingertips, then IP/DIP knuckles, then the last valid angle, then the
/// mid-open default. Only the geometric levels refresh the history.
pub fn gripper_with_fallback(
    h: &HandPoints3D,
    target: &Point3,
    state: &mut GripperState,
    params: &GripperParams,
) -> (f64, FallbackLevel) {
    let pairs = [
        (
            LandmarkId::THUMB_TIP,
            LandmarkId::INDEX_FINGER_TIP,
            FallbackLevel::Tips,
        ),
        (
            LandmarkId::THUMB_IP,
            LandmarkId::INDEX_FINGER_DIP,
            FallbackLevel::Knuckles,
        ),
    ];
    for (t, i, level) in pairs {
        if let (Some(tp), Some(ip)) = (h.get(t), h.get(i)) {
            if let Ok(phi) = gripper_angle(tp, ip, target, params) {
                state.last_valid_angle = Some(phi);
                state.level_used = Some(level);
                return (phi, level);
            }
        }
    }
    let (phi, level) = match state.last_valid_angle {
        Some(phi) => (phi, FallbackLevel::LastValid),
        None => (params.mid_open(), FallbackLevel::MidOpen),
    };
    state.level_used = Some(level);
    (phi, level)
}

pub fn apply_gripper_mode(phi: f64, params: &GripperParams) -> f64 {
    match params.mode {
        GripperMode::Normal => phi,
        GripperMode::Binary => {
            if phi >= params.binary_threshold {
                params.phi_max
            } else {
                params.phi_min
            }
        }
        GripperMode::Offset(v) => params.clamp(phi + v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handmodel::LANDMARK_COUNT;
    use proptest::prelude::*;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::robot(x, y, z)
    }

    fn normal() -> GripperParams {
        GripperParams {
            mode: GripperMode::Normal,
            ..Default::default()
        }
    }

    #[test]
    fn angle_examples() {
        let o = p(0.0, 0.0, 0.0);
        let phi = gripper_angle(&p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0), &o, &normal()).unwrap();
        assert!((phi - (FRAC_PI_2 - 0.175)).abs() < 1e-12);
        assert!((phi - 1.3958).abs() < 1e-4);

        let phi = gripper_angle(&p(1.0, 0.0, 0.0), &p(2.0, 0.0, 0.0), &o, &normal()).unwrap();
        assert_eq!(phi, 0.087);

        let phi = gripper_angle(&p(1.0, 0.0, 0.0), &p(-1.0, 0.0, 0.0), &o, &normal()).unwrap();
        assert!((phi - (FRAC_PI_2 - 0.175)).abs() < 1e-12);

        assert_eq!(
            gripper_angle(&o, &p(1.0, 0.0, 0.0), &o, &normal()),
            Err(GripperError::DegenerateVectors)
        );
    }

    #[test]
    fn modes() {
        let mut g = normal();
        assert_eq!(apply_gripper_mode(1.0, &g), 1.0);
        g.mode = GripperMode::Binary;
        assert_eq!(apply_gripper_mode(1.2, &g), 1.658);
        assert_eq!(apply_gripper_mode(1.0, &g), 0.087);
        assert_eq!(apply_gripper_mode(60f64.to_radians(), &g), 1.658);
        g.mode = GripperMode::Offset(-0.1);
        assert_eq!(apply_gripper_mode(0.15, &g), 0.087);
        assert!((apply_gripper_mode(1.0, &g) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("normal".parse::<GripperMode>().unwrap(), GripperMode::Normal);
        assert_eq!("binary".parse::<GripperMode>().unwrap(), GripperMode::Binary);
        assert_eq!("offset:-0.1".parse::<GripperMode>().unwrap(), GripperMode::Offset(-0.1));
        assert!("offset:x".parse::<GripperMode>().is_err());
        assert!("open".parse::<GripperMode>().is_err());
        for m in [GripperMode::Normal, GripperMode::Binary, GripperMode::Offset(0.25)] {
            assert_eq!(m.to_string().parse::<GripperMode>().unwrap(), m);
        }
    }

    #[test]
    fn default_params_are_valid() {
        GripperParams::default().validate().unwrap();
        let bad = GripperParams {
            binary_threshold: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn hand(ids: &[LandmarkId]) -> HandPoints3D {
        let mut pts = [None; LANDMARK_COUNT];
        for id in ids {
            let v = match *id {
                LandmarkId::THUMB_TIP => p(-0.05, 0.07, 0.0),
                LandmarkId::INDEX_FINGER_TIP => p(0.05, 0.07, 0.0),
                LandmarkId::THUMB_IP => p(-0.04, 0.03, 0.0),
                LandmarkId::INDEX_FINGER_DIP => p(0.04, 0.05, 0.0),
                _ => p(0.0, 0.0, 0.0),
            };
            pts[id.index()] = Some(v);
        }
        HandPoints3D::new(pts).unwrap()
    }

    #[test]
    fn fallback_levels() {
        let target = p(0.0, 0.0, 0.0);
        let g = normal();
        let mut state = GripperState::default();

        let (phi, lvl) = gripper_with_fallback(&hand(&[]), &target, &mut state, &g);
        assert_eq!(lvl, FallbackLevel::MidOpen);
        assert!((phi - 0.8725).abs() < 1e-12);
        assert_eq!(state.last_valid_angle, None);

        let all = [
            LandmarkId::THUMB_TIP,
            LandmarkId::INDEX_FINGER_TIP,
            LandmarkId::THUMB_IP,
            LandmarkId::INDEX_FINGER_DIP,
        ];
        let (phi1, lvl) = gripper_with_fallback(&hand(&all), &target, &mut state, &g);
        assert_eq!(lvl, FallbackLevel::Tips);
        let expected = gripper_angle(&p(-0.05, 0.07, 0.0), &p(0.05, 0.07, 0.0), &target, &g).unwrap();
        assert_eq!(phi1, expected);

        let (phi2, lvl) = gripper_with_fallback(&hand(&all[2..]), &target, &mut state, &g);
        assert_eq!(lvl, FallbackLevel::Knuckles);
        assert_eq!(state.last_valid_angle, Some(phi2));

        let (phi3, lvl) = gripper_with_fallback(&hand(&all[..1]), &target, &mut state, &g);
        assert_eq!(lvl, FallbackLevel::LastValid);
        assert_eq!(phi3, phi2);
        assert_eq!(state.level_used, Some(FallbackLevel::LastValid));
    }

    proptest! {
        #[test]
        fn angle_within_limits(a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0), off in -1.0f64..1.0) {
            let g = GripperParams { calibration_offset: off, ..normal() };
            if let Ok(phi) = gripper_angle(&p(a[0], a[1], a[2]), &p(b[0], b[1], b[2]), &p(0.0, 0.0, 0.0), &g) {
                prop_assert!(phi >= g.phi_min && phi <= g.phi_max);
            }
        }

        #[test]
        fn angle_scale_invariant(a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0), s in 0.01f64..100.0, t in prop::array::uniform3(-1.0f64..1.0)) {
            let o = p(t[0], t[1], t[2]);
            let g = normal();
            let pa = p(t[0] + a[0], t[1] + a[1], t[2] + a[2]);
            let pb = p(t[0] + b[0], t[1] + b[1], t[2] + b[2]);
            let sa = p(t[0] + s * a[0], t[1] + s * a[1], t[2] + s * a[2]);
            let sb = p(t[0] + s * b[0], t[1] + s * b[1], t[2] + s * b[2]);
            if let (Ok(x), Ok(y)) = (gripper_angle(&pa, &pb, &o, &g), gripper_angle(&sa, &sb, &o, &g)) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }

        #[test]
        fn binary_outputs_endpoints(phi in 0.087f64..=1.658) {
            let g = GripperParams::default();
            let out = apply_gripper_mode(phi, &g);
            prop_assert!(out == g.phi_min || out == g.phi_max);
        }
    }
}
