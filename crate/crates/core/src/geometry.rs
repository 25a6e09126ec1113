//! Axis-aligned box arithmetic.
//!
//! Boxes use the corner convention `(x1, y1, x2, y2)` in continuous pixel
//! coordinates. Areas are `(x2 - x1) * (y2 - y1)` with no `+1` pixel
//! correction, and containment tests use closed intervals.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// A point in the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// An axis-aligned rectangle, `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box from corners without validation. Callers handling
    /// untrusted input should go through [`BBox::try_new`].
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = Self::new(x1, y1, x2, y2);
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite(b.to_array()));
        }
        if x1 > x2 || y1 > y2 {
            return Err(GeometryError::Inverted(b.to_array()));
        }
        Ok(b)
    }

    /// Converts an `[x, y, w, h]` box into corner form.
    pub fn try_from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::try_new(x, y, x + w, y + h)
    }

    pub fn from_center(center: Point, w: f64, h: f64) -> Self {
        Self::new(
            center.x - 0.5 * w,
            center.y - 0.5 * h,
            center.x + 0.5 * w,
            center.y + 0.5 * h,
        )
    }

    /// A zero-area box sitting on `p`.
    pub fn degenerate(p: Point) -> Self {
        Self::new(p.x, p.y, p.x, p.y)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Overlap region, or `None` when the boxes do not share positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x2 > x1 && y2 > y1).then(|| BBox::new(x1, y1, x2, y2))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    /// Closed-boundary point containment.
    pub fn contains(&self, p: Point) -> bool {
        self.x1 <= p.x && p.x <= self.x2 && self.y1 <= p.y && p.y <= self.y2
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Scales about the origin.
    pub fn scale(&self, s: f64) -> BBox {
        BBox::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    /// Component-wise convex blend `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &BBox, t: f64) -> BBox {
        let mix = |a: f64, b: f64| a * (1.0 - t) + b * t;
        BBox::new(
            mix(self.x1, other.x1),
            mix(self.y1, other.y1),
            mix(self.x2, other.x2),
            mix(self.y2, other.y2),
        )
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::try_new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union. Zero-area inputs give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - |hull \ union| / |hull|`.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    if hull <= 0.0 {
        // both boxes collapse to a segment or point; nothing to measure
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (hull - union) / hull
}

pub fn contains(b: &BBox, p: Point) -> bool {
    b.contains(p)
}
