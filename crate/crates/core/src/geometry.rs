//! Boxes, labels, frames and zones shared by every stage of the engine.
//!
//! Boxes are stored in center format `(cx, cy, w, h)`, the same layout the
//! grid decoder produces. Corner format only appears inside the overlap
//! arithmetic.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center format.
///
/// Units are pixels everywhere except inside the grid decoder, where they
/// are grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Builds a box from its top-left and bottom-right corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        bbox_area(self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.cx * sx, self.cy * sy, self.w * sx, self.h * sy)
    }
}

pub fn bbox_area(b: &BoundingBox) -> f64 {
    b.w * b.h
}

fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

/// Intersection over union. Boxes that only share an edge score 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = bbox_area(a) + bbox_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Clamps a box to `[0, width] x [0, height]`.
pub fn clip_to_frame(b: &BoundingBox, frame: &FrameRef) -> Result<BoundingBox> {
    let (x1, y1, x2, y2) = b.corners();
    let fw = f64::from(frame.width);
    let fh = f64::from(frame.height);
    let (cx1, cy1) = (x1.clamp(0.0, fw), y1.clamp(0.0, fh));
    let (cx2, cy2) = (x2.clamp(0.0, fw), y2.clamp(0.0, fh));
    if cx2 - cx1 <= 0.0 || cy2 - cy1 <= 0.0 {
        return Err(Error::BoxOutsideFrame {
            width: frame.width,
            height: frame.height,
        });
    }
    if (cx1, cy1, cx2, cy2) == (x1, y1, x2, y2) {
        return Ok(*b);
    }
    Ok(BoundingBox::from_corners(cx1, cy1, cx2, cy2))
}

/// Stage-one vocabulary.
pub const PERSON_CLASSES: [&str; 1] = ["Person"];

/// Stage-two vocabulary: the five attire categories.
pub const ATTIRE_CLASSES: [&str; 5] = ["Jacket", "T-Shirt", "Shorts", "Skirt", "Top"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ordered class-name list; a label's id is its index here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    stage: &'static str,
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new(stage: &'static str, names: &[&str]) -> Self {
        Self {
            stage,
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn person() -> Self {
        Self::new("person", &PERSON_CLASSES)
    }

    pub fn attire() -> Self {
        Self::new("attire", &ATTIRE_CLASSES)
    }

    pub fn stage(&self) -> &'static str {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn label(&self, id: usize) -> Option<ClassLabel> {
        self.names.get(id).map(|name| ClassLabel { id, name: name.clone() })
    }

    pub fn lookup(&self, name: &str) -> Option<ClassLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|id| ClassLabel { id, name: name.to_string() })
    }

    pub fn contains(&self, label: &ClassLabel) -> bool {
        self.names.get(label.id).is_some_and(|n| *n == label.name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// A decoded (or scripted) detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: ClassLabel,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: ClassLabel, score: f64) -> Self {
        Self {
            bbox,
            label,
            score,
            class_probs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub zone_id: String,
}

impl FrameRef {
    pub fn new(frame_id: u64, width: u32, height: u32, zone_id: impl Into<String>) -> Self {
        Self {
            frame_id,
            width,
            height,
            zone_id: zone_id.into(),
        }
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox::from_corners(0.0, 0.0, f64::from(self.width), f64::from(self.height))
    }
}

/// Attire classes a zone accepts. An empty set flags every garment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZonePolicy {
    pub zone_id: String,
    pub authorized: BTreeSet<ClassLabel>,
}

impl ZonePolicy {
    pub fn new(zone_id: impl Into<String>, authorized: impl IntoIterator<Item = ClassLabel>) -> Self {
        Self {
            zone_id: zone_id.into(),
            authorized: authorized.into_iter().collect(),
        }
    }

    pub fn authorizes(&self, label: &ClassLabel) -> bool {
        self.authorized.contains(label)
    }
}
