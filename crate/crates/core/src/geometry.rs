//! Normalized image-space primitives shared by every module.
//!
//! The primary camera is a top-down view of the unit table, so world and
//! image coordinates coincide up to the sensor transform applied in
//! [`crate::sim`].

use serde::{Deserialize, Serialize};

/// A point in normalized image coordinates, both components in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Linear interpolation, `t = 0` gives `self`.
    pub fn lerp(&self, other: &ImagePoint, t: f64) -> ImagePoint {
        ImagePoint::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }

    pub fn in_unit_square(&self) -> bool {
        unit(self.x) && unit(self.y)
    }

    pub fn clamped(&self) -> ImagePoint {
        ImagePoint::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }
}

impl From<[f64; 2]> for ImagePoint {
    fn from(p: [f64; 2]) -> Self {
        ImagePoint::new(p[0], p[1])
    }
}

impl From<ImagePoint> for [f64; 2] {
    fn from(p: ImagePoint) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl ImageBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Box of half-width `half_extent` around `center`.
    pub fn around(center: ImagePoint, half_extent: f64) -> Self {
        Self::new(
            center.x - half_extent,
            center.y - half_extent,
            center.x + half_extent,
            center.y + half_extent,
        )
    }

    /// Smallest box containing both corners, regardless of their order.
    pub fn from_corners(a: ImagePoint, b: ImagePoint) -> Self {
        Self::new(a.x.min(b.x), a.y.min(b.y), a.x.max(b.x), a.y.max(b.y))
    }

    pub fn center(&self) -> ImagePoint {
        ImagePoint::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains(&self, p: &ImagePoint) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn intersection_area(&self, other: &ImageBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &ImageBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn is_well_ordered(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn in_unit_square(&self) -> bool {
        unit(self.x_min) && unit(self.y_min) && unit(self.x_max) && unit(self.y_max)
    }

    pub fn corners(&self) -> [ImagePoint; 2] {
        [
            ImagePoint::new(self.x_min, self.y_min),
            ImagePoint::new(self.x_max, self.y_max),
        ]
    }
}

fn unit(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}
