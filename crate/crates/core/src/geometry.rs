//! Axis-aligned bounding boxes in corner format.
//!
//! Coordinates are continuous pixels. A box is valid when every coordinate is
//! finite and `x1 <= x2`, `y1 <= y2`; zero-width or zero-height boxes are
//! allowed and simply have no area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box has a non-finite coordinate: {0:?}")]
    NonFinite(BBox),
    #[error("box corners are inverted: {0:?}")]
    Inverted(BBox),
    #[error("generalized IoU is undefined for two zero-area boxes")]
    DegenerateGiou,
}

/// A rectangle `(x1, y1, x2, y2)`. Serialized as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(c: [f64; 4]) -> Self {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    /// Builds a box without checking it. Use [`BBox::validate`] or
    /// [`BBox::try_new`] where the input is untrusted.
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = BBox::new(x1, y1, x2, y2);
        b.validate()?;
        Ok(b)
    }

    /// Converts a center/size box to corner format.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        BBox::new(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.to_array().iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite(*self));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(GeometryError::Inverted(*self));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
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

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, s: f64) -> Self {
        BBox::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    /// Corner-wise linear interpolation, `t = 0` gives `self`, `t = 1` gives `other`.
    pub fn lerp(&self, other: &BBox, t: f64) -> Self {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        BBox::new(
            mix(self.x1, other.x1),
            mix(self.y1, other.y1),
            mix(self.x2, other.x2),
            mix(self.y2, other.y2),
        )
    }
}

pub fn box_area(b: &BBox) -> f64 {
    b.area()
}

/// Area of the overlap of two boxes, 0 when they do not touch.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

pub fn union_area(a: &BBox, b: &BBox) -> f64 {
    a.area() + b.area() - intersection_area(a, b)
}

/// Intersection over union. Two zero-area boxes have IoU 0.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest box containing both inputs.
pub fn enclosing_box(a: &BBox, b: &BBox) -> BBox {
    BBox::new(a.x1.min(b.x1), a.y1.min(b.y1), a.x2.max(b.x2), a.y2.max(b.y2))
}

/// Generalized IoU: `I/U - (A_c - U)/A_c` where `A_c` is the enclosing area.
///
/// Fails when both boxes have zero area, since the union is empty.
pub fn box_giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(GeometryError::DegenerateGiou);
    }
    let enclosing = enclosing_box(a, b).area();
    Ok(inter / union - (enclosing - union) / enclosing)
}

/// Sum of absolute coordinate differences.
pub fn box_l1(a: &BBox, b: &BBox) -> f64 {
    (a.x1 - b.x1).abs() + (a.y1 - b.y1).abs() + (a.x2 - b.x2).abs() + (a.y2 - b.y2).abs()
}
