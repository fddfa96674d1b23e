//! Spatial priors (point, box, trace) and guidance events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImageBox, ImagePoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialPrior {
    Point { point: ImagePoint },
    Box {
        #[serde(rename = "box")]
        bbox: ImageBox,
    },
    Trace { points: Vec<ImagePoint> },
}

impl SpatialPrior {
    pub fn point(x: f64, y: f64) -> Self {
        SpatialPrior::Point {
            point: ImagePoint::new(x, y),
        }
    }

    pub fn bbox(b: ImageBox) -> Self {
        SpatialPrior::Box { bbox: b }
    }

    pub fn trace(points: Vec<ImagePoint>) -> Self {
        SpatialPrior::Trace { points }
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            SpatialPrior::Point { .. } => PriorKind::Point,
            SpatialPrior::Box { .. } => PriorKind::Box,
            SpatialPrior::Trace { .. } => PriorKind::Trace,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Point,
    Box,
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceTiming {
    UpFront,
    MidEpisode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSource {
    User,
    Scripted,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceEvent {
    pub prior: SpatialPrior,
    pub timing: GuidanceTiming,
    pub source: GuidanceSource,
    pub issued_at: u64,
}

impl GuidanceEvent {
    pub fn up_front(prior: SpatialPrior, source: GuidanceSource) -> Self {
        Self {
            prior,
            timing: GuidanceTiming::UpFront,
            source,
            issued_at: 0,
        }
    }

    pub fn mid_episode(prior: SpatialPrior, source: GuidanceSource, issued_at: u64) -> Self {
        Self {
            prior,
            timing: GuidanceTiming::MidEpisode,
            source,
            issued_at,
        }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.timing == GuidanceTiming::UpFront && self.issued_at != 0 {
            return Err(PriorError::UpFrontIssuedLate(self.issued_at));
        }
        validate_prior(&self.prior)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorError {
    #[error("{field} = {value} outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("x_min ≥ x_max")]
    BoxXOrder,
    #[error("y_min ≥ y_max")]
    BoxYOrder,
    #[error("trace needs ≥ 2 points, got {0}")]
    TraceTooShort(usize),
    #[error("trace waypoint {index} repeats the previous point")]
    TraceRepeatedPoint { index: usize },
    #[error("resampling needs m ≥ 2, got {0}")]
    BadWaypointCount(usize),
    #[error("trace has zero arc length")]
    ZeroLengthTrace,
    #[error("up-front guidance must be issued at tick 0, got {0}")]
    UpFrontIssuedLate(u64),
}

fn check_unit(field: &'static str, value: f64) -> Result<(), PriorError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PriorError::OutOfRange { field, value })
    }
}

fn check_point(p: &ImagePoint) -> Result<(), PriorError> {
    check_unit("x", p.x)?;
    check_unit("y", p.y)
}

/// Checks a prior's coordinate and shape constraints, reporting the first
/// violation.
///
/// A trace must have at least two points and no two consecutive points may
/// coincide, except for the fully degenerate trace whose points are all equal
/// (the evaluation trace for a gripper already at the target).
pub fn validate_prior(prior: &SpatialPrior) -> Result<(), PriorError> {
    match prior {
        SpatialPrior::Point { point } => check_point(point),
        SpatialPrior::Box { bbox } => {
            check_unit("x_min", bbox.x_min)?;
            check_unit("y_min", bbox.y_min)?;
            check_unit("x_max", bbox.x_max)?;
            check_unit("y_max", bbox.y_max)?;
            if bbox.x_min >= bbox.x_max {
                return Err(PriorError::BoxXOrder);
            }
            if bbox.y_min >= bbox.y_max {
                return Err(PriorError::BoxYOrder);
            }
            Ok(())
        }
        SpatialPrior::Trace { points } => {
            if points.len() < 2 {
                return Err(PriorError::TraceTooShort(points.len()));
            }
            for p in points {
                check_point(p)?;
            }
            let all_same = points.iter().all(|p| p == &points[0]);
            if !all_same {
                if let Some(i) = (1..points.len()).find(|&i| points[i] == points[i - 1]) {
                    return Err(PriorError::TraceRepeatedPoint { index: i });
                }
            }
            Ok(())
        }
    }
}

pub fn arc_length(points: &[ImagePoint]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Resamples a polyline to `m` points equally spaced by arc length. The
/// first and last input points are kept exactly.
pub fn resample_trace(points: &[ImagePoint], m: usize) -> Result<Vec<ImagePoint>, PriorError> {
    if points.len() < 2 {
        return Err(PriorError::TraceTooShort(points.len()));
    }
    if m < 2 {
        return Err(PriorError::BadWaypointCount(m));
    }
    let total = arc_length(points);
    if total <= 0.0 || !total.is_finite() {
        return Err(PriorError::ZeroLengthTrace);
    }
    let last = *points.last().expect("len >= 2");
    let mut out = Vec::with_capacity(m);
    out.push(points[0]);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 1..m - 1 {
        let s = total * i as f64 / (m - 1) as f64;
        loop {
            let len = points[seg].distance(&points[seg + 1]);
            if seg_start + len >= s || seg + 2 == points.len() {
                let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
                out.push(points[seg].lerp(&points[seg + 1], t));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out.push(last);
    Ok(out)
}

/// Straight-line trace from the gripper to the target box center.
pub fn make_eval_trace(gripper: ImagePoint, target_box: &ImageBox, m: usize) -> Result<SpatialPrior, PriorError> {
    if m < 2 {
        return Err(PriorError::BadWaypointCount(m));
    }
    check_point(&gripper)?;
    validate_prior(&SpatialPrior::bbox(*target_box))?;
    let end = target_box.center();
    let points = (0..m)
        .map(|i| {
            if i == m - 1 {
                end
            } else {
                gripper.lerp(&end, i as f64 / (m - 1) as f64)
            }
        })
        .collect();
    Ok(SpatialPrior::trace(points))
}
