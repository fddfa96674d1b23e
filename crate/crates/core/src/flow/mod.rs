//! Conditional flow-matching action head: a small vector field over action
//! chunks, trained on expert demonstrations and sampled by Euler steps.

mod io;
mod model;
mod sample;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ImagePoint;
use crate::reasoner::{ReasoningMemory, MEMORY_DIM};
use crate::sim::{Action, Observation};

pub use io::{load_model, read_model, save_model, write_loss_csv, write_model};
pub use model::{FlowModel, ParamBlock, VectorField, HIDDEN};
pub use sample::{sample_chunk, DEFAULT_EULER_STEPS};
pub use train::{fm_loss, fm_loss_and_grad, noise_draw, train, FlowSample, LossPoint, Optimizer, TrainConfig, TrainOutput};

pub const DEFAULT_CHUNK_LEN: usize = 8;
pub const ACTION_DIM: usize = 3;

/// Layout of [`ConditioningVector`].
pub mod cond_layout {
    use std::ops::Range;
    /// gripper x, y, aperture
    pub const PROPRIO: Range<usize> = 0..3;
    /// nearest wrist object dx, dy, distance; sentinel (0, 0, 1)
    pub const WRIST: Range<usize> = 3..6;
    /// affordance, carrot and path end, each relative to the gripper
    pub const TARGET: Range<usize> = 6..12;
    pub const MEMORY: Range<usize> = 12..44;
    pub const LEN: usize = 44;
}

/// Scale applied to gripper-relative target offsets.
pub const TARGET_SCALE: f64 = 5.0;
/// How far past the gripper's projection onto the memory path the carrot sits.
pub const CARROT_LOOKAHEAD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("non-finite value in {block}")]
    NonFinite { block: &'static str },
    #[error("training diverged at step {step} (loss {loss:e}); lower the learning rate")]
    Diverged { step: usize, loss: f64 },
    #[error("empty batch or dataset")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("euler steps must be at least 1")]
    ZeroSteps,
    #[error("bad model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub steps: Vec<Action>,
}

impl ActionChunk {
    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            steps: flat.chunks_exact(ACTION_DIM).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.steps.iter().flatten().copied().collect()
    }

    pub fn is_valid(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().flatten().all(|v| v.is_finite() && v.abs() <= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVector(pub Vec<f64>);

/// Point [`CARROT_LOOKAHEAD`] further along `path` than the projection of
/// `from` onto it.
pub fn carrot_point(path: &[ImagePoint], from: ImagePoint) -> Option<ImagePoint> {
    let (first, last) = (*path.first()?, *path.last()?);
    if path.len() == 1 {
        return Some(first);
    }
    // arc-length position of the closest point on the polyline
    let (mut best, mut best_s, mut s) = (f64::INFINITY, 0.0, 0.0);
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.distance(&b);
        let t = if len > 0.0 {
            (((from.x - a.x) * (b.x - a.x) + (from.y - a.y) * (b.y - a.y)) / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = a.lerp(&b, t).distance(&from);
        if d < best {
            best = d;
            best_s = s + t * len;
        }
        s += len;
    }
    let mut goal = best_s + CARROT_LOOKAHEAD;
    for w in path.windows(2) {
        let len = w[0].distance(&w[1]);
        if goal <= len && len > 0.0 {
            return Some(w[0].lerp(&w[1], goal / len));
        }
        goal -= len;
    }
    Some(last)
}

/// Builds the fast loop's conditioning from the current observation and the
/// cached reasoning memory.
pub fn featurize(obs: &Observation, memory: &ReasoningMemory) -> ConditioningVector {
    let mut v = vec![0.0; cond_layout::LEN];
    let g = obs.gripper_image;
    v[cond_layout::PROPRIO].copy_from_slice(&[obs.proprio.position.x, obs.proprio.position.y, obs.proprio.aperture]);
    let wrist = match obs.wrist_view.first() {
        Some(w) => [w.offset[0], w.offset[1], w.offset[0].hypot(w.offset[1])],
        None => [0.0, 0.0, 1.0],
    };
    v[cond_layout::WRIST].copy_from_slice(&wrist);
    let rel = |p: ImagePoint| [(p.x - g.x) * TARGET_SCALE, (p.y - g.y) * TARGET_SCALE];
    let t = cond_layout::TARGET.start;
    if let Some(a) = memory.cot.affordance {
        v[t..t + 2].copy_from_slice(&rel(a));
    }
    let path = &memory.cot.gripper_path;
    if let Some(c) = carrot_point(path, g) {
        v[t + 2..t + 4].copy_from_slice(&rel(c));
    }
    if let Some(e) = path.last() {
        v[t + 4..t + 6].copy_from_slice(&rel(*e));
    }
    debug_assert_eq!(memory.vector.len(), MEMORY_DIM);
    v[cond_layout::MEMORY].copy_from_slice(&memory.vector);
    ConditioningVector(v)
}
