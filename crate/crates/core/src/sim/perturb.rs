//! Distribution-shift configuration and the geometric transforms behind it.

use serde::{Deserialize, Serialize};

use crate::geometry::{ImageBox, ImagePoint};

const CENTER: ImagePoint = ImagePoint::new(0.5, 0.5);

/// Main-camera viewpoint change, applied about the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorShift {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: [f64; 2],
}

impl SensorShift {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            translation: [0.0, 0.0],
        }
    }

    /// World point to main-view image point (unclamped).
    pub fn apply(&self, p: &ImagePoint) -> ImagePoint {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = (p.x - CENTER.x, p.y - CENTER.y);
        ImagePoint::new(
            CENTER.x + self.scale * (c * dx - s * dy) + self.translation[0],
            CENTER.y + self.scale * (s * dx + c * dy) + self.translation[1],
        )
    }

    /// Image point back to world coordinates.
    pub fn invert(&self, p: &ImagePoint) -> ImagePoint {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = (p.x - CENTER.x - self.translation[0]) / self.scale;
        let dy = (p.y - CENTER.y - self.translation[1]) / self.scale;
        ImagePoint::new(CENTER.x + c * dx + s * dy, CENTER.y - s * dx + c * dy)
    }

    /// Axis-aligned hull of the transformed box corners (unclamped).
    pub fn apply_box(&self, b: &ImageBox) -> ImageBox {
        let corners = [
            ImagePoint::new(b.x_min, b.y_min),
            ImagePoint::new(b.x_max, b.y_min),
            ImagePoint::new(b.x_min, b.y_max),
            ImagePoint::new(b.x_max, b.y_max),
        ]
        .map(|p| self.apply(&p));
        hull(&corners)
    }

    pub fn invert_box(&self, b: &ImageBox) -> ImageBox {
        let corners = [
            ImagePoint::new(b.x_min, b.y_min),
            ImagePoint::new(b.x_max, b.y_min),
            ImagePoint::new(b.x_min, b.y_max),
            ImagePoint::new(b.x_max, b.y_max),
        ]
        .map(|p| self.invert(&p));
        hull(&corners)
    }
}

fn hull(points: &[ImagePoint]) -> ImageBox {
    let mut b = ImageBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        b.x_min = b.x_min.min(p.x);
        b.y_min = b.y_min.min(p.y);
        b.x_max = b.x_max.max(p.x);
        b.y_max = b.y_max.max(p.y);
    }
    b
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingShift {
    /// Standard deviation of the per-object box displacement.
    pub position_noise: f64,
    /// Probability that an object's color is not reported.
    pub color_dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotStateShift {
    pub init_radius: f64,
    pub actuation_noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageShift {
    pub lexicon_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    /// An identical twin of the target plus same-category objects in other colors.
    Color,
    /// An identical twin of the target only.
    Position,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectShift {
    #[serde(default)]
    pub unseen_category: bool,
    #[serde(default)]
    pub distractor: Option<DistractorKind>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    #[serde(default)]
    pub sensor: Option<SensorShift>,
    #[serde(default)]
    pub lighting: Option<LightingShift>,
    #[serde(default)]
    pub robot_state: Option<RobotStateShift>,
    #[serde(default)]
    pub language: Option<LanguageShift>,
    #[serde(default)]
    pub objects: Option<ObjectShift>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid perturbation: {0}")]
pub struct PerturbationError(pub String);

impl PerturbationConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), PerturbationError> {
        let bad = |m: &str| Err(PerturbationError(m.into()));
        if let Some(s) = &self.sensor {
            if !(s.rotation_deg.is_finite() && s.scale.is_finite() && s.scale > 0.0)
                || !s.translation.iter().all(|t| t.is_finite())
            {
                return bad("sensor shift needs finite values and scale > 0");
            }
        }
        if let Some(l) = &self.lighting {
            if !(l.position_noise >= 0.0 && l.position_noise.is_finite()) {
                return bad("lighting position noise must be ≥ 0");
            }
            if !(0.0..=1.0).contains(&l.color_dropout) {
                return bad("color dropout must be a probability");
            }
        }
        if let Some(r) = &self.robot_state {
            if !(r.init_radius >= 0.0 && r.init_radius.is_finite()) {
                return bad("initial-pose radius must be ≥ 0");
            }
            if !(r.actuation_noise >= 0.0 && r.actuation_noise.is_finite()) {
                return bad("actuation noise must be ≥ 0");
            }
        }
        Ok(())
    }

    pub fn sensor_or_identity(&self) -> SensorShift {
        self.sensor.unwrap_or_else(SensorShift::identity)
    }

    pub fn actuation_noise(&self) -> f64 {
        self.robot_state.map_or(0.0, |r| r.actuation_noise)
    }
}
