//! Axis-aligned bounding boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::numerics::GeometryError;

/// Axis-aligned box with corners `(x1, y1)` (top-left) and `(x2, y2)`
/// (bottom-right, exclusive). Coordinates are pixels unless the caller
/// tracks a normalized flag externally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite())
        {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(GeometryError::InvalidBox(format!(
                "requires x1 < x2 and y1 < y2, got ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0]
    }

    /// Bottom-center point, the contact point used for surface positions.
    pub fn bottom_center(&self) -> [f64; 2] {
        [(self.x1 + self.x2) / 2.0, self.y2]
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Fraction of the smaller box covered by the intersection.
    pub fn overlap_ratio(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let denom = self.area().min(other.area());
        if denom <= 0.0 {
            0.0
        } else {
            inter / denom
        }
    }

    /// True when `self` lies entirely inside `other` scaled by `factor`
    /// about its center.
    pub fn contained_in_scaled(&self, other: &BBox, factor: f64) -> bool {
        let [cx, cy] = other.center();
        let hw = other.width() / 2.0 * factor;
        let hh = other.height() / 2.0 * factor;
        self.x1 >= cx - hw && self.x2 <= cx + hw && self.y1 >= cy - hh && self.y2 <= cy + hh
    }

    /// Shortest gap between box boundaries; zero when the boxes touch or
    /// overlap.
    pub fn gap_distance(&self, other: &BBox) -> f64 {
        let dx = (other.x1 - self.x2).max(self.x1 - other.x2).max(0.0);
        let dy = (other.y1 - self.y2).max(self.y1 - other.y2).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn as_vec4(&self) -> Vec<f64> {
        vec![self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union of two boxes. Symmetric, in `[0, 1]`, and 1
/// exactly when the boxes are equal.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
