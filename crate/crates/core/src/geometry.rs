//! Axis-aligned boxes in corner convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Box given by its upper-left `(x1, y1)` and lower-right `(x2, y2)` corners.
///
/// On disk and in scene annotations the units are pixels; at the model
/// boundary they are normalized to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxXyxy {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BoxXyxy {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoxXyxy> for [f64; 4] {
    fn from(b: BoxXyxy) -> Self {
        b.to_array()
    }
}

impl BoxXyxy {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_cxcywh(self) -> [f64; 4] {
        [(self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Error unless the box is finite with positive width and height.
    pub fn validate(&self) -> Result<()> {
        if self.is_finite() && self.x2 > self.x1 && self.y2 > self.y1 {
            Ok(())
        } else {
            Err(Error::DegenerateBox(self.to_array()))
        }
    }

    pub fn intersection(&self, other: &BoxXyxy) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }

    pub fn union_area(&self, other: &BoxXyxy) -> f64 {
        self.area() + other.area() - self.intersection(other)
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &BoxXyxy) -> BoxXyxy {
        BoxXyxy::new(self.x1.min(other.x1), self.y1.min(other.y1), self.x2.max(other.x2), self.y2.max(other.y2))
    }

    pub fn iou(&self, other: &BoxXyxy) -> f64 {
        let u = self.union_area(other);
        if u <= 0.0 {
            0.0
        } else {
            self.intersection(other) / u
        }
    }

    pub fn overlaps(&self, other: &BoxXyxy) -> bool {
        self.intersection(other) > 0.0
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BoxXyxy {
        BoxXyxy::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoxXyxy {
        BoxXyxy::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn dilate(&self, by: f64) -> BoxXyxy {
        BoxXyxy::new(self.x1 - by, self.y1 - by, self.x2 + by, self.y2 + by)
    }

    pub fn clip(&self, width: f64, height: f64) -> BoxXyxy {
        BoxXyxy::new(self.x1.clamp(0.0, width), self.y1.clamp(0.0, height), self.x2.clamp(0.0, width), self.y2.clamp(0.0, height))
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }
}

/// Generalized IoU: `IoU - (enclosure - union) / enclosure`, in `(-1, 1]`.
pub fn giou(a: &BoxXyxy, b: &BoxXyxy) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let union = a.union_area(b);
    let enclosure = a.enclosing(b).area();
    Ok(a.intersection(b) / union - (enclosure - union) / enclosure)
}
