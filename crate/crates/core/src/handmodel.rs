//! 21-keypoint hand schema, 2D landmark smoothing and frame acceptance.
//!
//! Indices follow the standard 21-keypoint hand topology used by common
//! hand-landmark detectors: the wrist, then four joints per digit from the
//! thumb to the pinky, each ordered from the palm outwards.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of landmarks per hand.
pub const LANDMARK_COUNT: usize = 21;

/// Index of one hand landmark, `0..=20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LandmarkId(u8);

impl LandmarkId {
    pub const WRIST: Self = Self(0);
    pub const THUMB_CMC: Self = Self(1);
    pub const THUMB_MCP: Self = Self(2);
    pub const THUMB_IP: Self = Self(3);
    pub const THUMB_TIP: Self = Self(4);
    pub const INDEX_FINGER_MCP: Self = Self(5);
    pub const INDEX_FINGER_PIP: Self = Self(6);
    pub const INDEX_FINGER_DIP: Self = Self(7);
    pub const INDEX_FINGER_TIP: Self = Self(8);
    pub const MIDDLE_FINGER_MCP: Self = Self(9);
    pub const MIDDLE_FINGER_PIP: Self = Self(10);
    pub const MIDDLE_FINGER_DIP: Self = Self(11);
    pub const MIDDLE_FINGER_TIP: Self = Self(12);
    pub const RING_FINGER_MCP: Self = Self(13);
    pub const RING_FINGER_PIP: Self = Self(14);
    pub const RING_FINGER_DIP: Self = Self(15);
    pub const RING_FINGER_TIP: Self = Self(16);
    pub const PINKY_MCP: Self = Self(17);
    pub const PINKY_PIP: Self = Self(18);
    pub const PINKY_DIP: Self = Self(19);
    pub const PINKY_TIP: Self = Self(20);

    const NAMES: [&'static str; LANDMARK_COUNT] = [
        "WRIST",
        "THUMB_CMC",
        "THUMB_MCP",
        "THUMB_IP",
        "THUMB_TIP",
        "INDEX_FINGER_MCP",
        "INDEX_FINGER_PIP",
        "INDEX_FINGER_DIP",
        "INDEX_FINGER_TIP",
        "MIDDLE_FINGER_MCP",
        "MIDDLE_FINGER_PIP",
        "MIDDLE_FINGER_DIP",
        "MIDDLE_FINGER_TIP",
        "RING_FINGER_MCP",
        "RING_FINGER_PIP",
        "RING_FINGER_DIP",
        "RING_FINGER_TIP",
        "PINKY_MCP",
        "PINKY_PIP",
        "PINKY_DIP",
        "PINKY_TIP",
    ];

    /// Returns `None` for indices above 20.
    pub fn new(index: usize) -> Option<Self> {
        (index < LANDMARK_COUNT).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| Self(i as u8))
    }

    /// All 21 identifiers in index order.
    pub fn all() -> impl Iterator<Item = Self> {
        (0..LANDMARK_COUNT as u8).map(Self)
    }
}

impl fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Default for Handedness {
    fn default() -> Self {
        Self::Right
    }
}

/// One timestamped detector observation of a single hand.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub timestamp: f64,
    pub handedness: Handedness,
    pub pixels: [[f64; 2]; LANDMARK_COUNT],
    pub pixel_valid: [bool; LANDMARK_COUNT],
}

impl LandmarkFrame {
    /// Pixel of `id`, or `None` when the detector flagged it invalid.
    pub fn pixel(&self, id: LandmarkId) -> Option<[f64; 2]> {
        let i = id.index();
        self.pixel_valid[i].then_some(self.pixels[i])
    }

    pub fn valid_count(&self) -> usize {
        self.pixel_valid.iter().filter(|v| **v).count()
    }
}

/// Default smoothing factor for 2D landmarks.
pub const DEFAULT_LANDMARK_ALPHA: f64 = 0.8;

/// Per-stream exponential moving average over the 21 landmark pixels.
///
/// History is kept per landmark: a landmark that drops out forgets its
/// estimate, and its next detection starts a fresh history.
#[derive(Debug, Clone)]
pub struct SmoothingState2D {
    alpha: f64,
    previous: [Option<[f64; 2]>; LANDMARK_COUNT],
}

impl SmoothingState2D {
    /// `alpha` must lie in `(0, 1]`.
    pub fn new(alpha: f64) -> Option<Self> {
        (alpha > 0.0 && alpha <= 1.0).then_some(Self {
            alpha,
            previous: [None; LANDMARK_COUNT],
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn previous(&self, id: LandmarkId) -> Option<[f64; 2]> {
        self.previous[id.index()]
    }

    pub fn reset(&mut self) {
        self.previous = [None; LANDMARK_COUNT];
    }

    /// Smooths the valid landmarks of `raw` and records them as history.
    pub fn ema_smooth_2d(&mut self, raw: &LandmarkFrame) -> LandmarkFrame {
        let mut out = raw.clone();
        for i in 0..LANDMARK_COUNT {
            if !raw.pixel_valid[i] {
                self.previous[i] = None;
                continue;
            }
            let p = raw.pixels[i];
            let smoothed = match self.previous[i] {
                Some(prev) => [
                    self.alpha * p[0] + (1.0 - self.alpha) * prev[0],
                    self.alpha * p[1] + (1.0 - self.alpha) * prev[1],
                ],
                None => p,
            };
            out.pixels[i] = smoothed;
            self.previous[i] = Some(smoothed);
        }
        out
    }
}

impl Default for SmoothingState2D {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_LANDMARK_ALPHA,
            previous: [None; LANDMARK_COUNT],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceptance {
    Accept,
    Reject,
}

/// A hand is rejected when fewer than half of its 21 landmarks are valid.
pub fn frame_acceptance(valid_count: usize) -> Acceptance {
    // 2 * count < 21  <=>  count < 10.5
    if 2 * valid_count < LANDMARK_COUNT {
        Acceptance::Reject
    } else {
        Acceptance::Accept
    }
}
