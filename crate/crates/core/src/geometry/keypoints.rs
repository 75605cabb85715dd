use serde::{Deserialize, Serialize};

use crate::geometry::AffineMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JointState {
    Invisible,
    Visible,
    Predicted { confidence: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    #[serde(flatten)]
    pub state: JointState,
}

impl Joint {
    pub fn visible(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            state: JointState::Visible,
        }
    }

    pub fn invisible() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            state: JointState::Invisible,
        }
    }

    pub fn predicted(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            state: JointState::Predicted { confidence },
        }
    }

    pub fn is_visible(&self) -> bool {
        !matches!(self.state, JointState::Invisible)
    }

    pub fn is_labeled(&self) -> bool {
        matches!(self.state, JointState::Visible)
    }

    pub fn confidence(&self) -> Option<f64> {
        match self.state {
            JointState::Predicted { confidence } => Some(confidence),
            _ => None,
        }
    }
}

/// Ordered set of `k` joints in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointSet {
    pub joints: Vec<Joint>,
}

impl KeypointSet {
    pub fn new(joints: Vec<Joint>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Coordinates of every joint that is labeled-visible or predicted.
    pub fn usable_points(&self) -> Vec<(f64, f64)> {
        self.joints
            .iter()
            .filter(|j| j.is_visible())
            .map(|j| (j.x, j.y))
            .collect()
    }

    /// Drops predicted joints whose confidence is below `threshold`.
    pub fn with_min_confidence(&self, threshold: f64) -> Self {
        let joints = self
            .joints
            .iter()
            .map(|j| match j.state {
                JointState::Predicted { confidence } if confidence < threshold => Joint {
                    state: JointState::Invisible,
                    ..*j
                },
                _ => *j,
            })
            .collect();
        Self { joints }
    }

    /// Axis-aligned bounds `(x0, y0, x1, y1)` of labeled-visible joints.
    pub fn labeled_bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.joints.iter().filter(|j| j.is_labeled());
        let first = it.next()?;
        Some(it.fold((first.x, first.y, first.x, first.y), |b, j| {
            (b.0.min(j.x), b.1.min(j.y), b.2.max(j.x), b.3.max(j.y))
        }))
    }
}

/// Maps every joint through `a`; joints landing outside an `out_size = (height, width)`
/// raster become invisible.
pub fn warp_points(kps: &KeypointSet, a: &AffineMap, out_size: (usize, usize)) -> KeypointSet {
    let (h, w) = (out_size.0 as f64, out_size.1 as f64);
    let joints = kps
        .joints
        .iter()
        .map(|j| {
            let (x, y) = a.apply(j.x, j.y);
            let inside = x >= -0.5 && y >= -0.5 && x < w - 0.5 && y < h - 0.5;
            let state = if inside { j.state } else { JointState::Invisible };
            Joint { x, y, state }
        })
        .collect();
    KeypointSet { joints }
}
