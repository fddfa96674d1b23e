//! Annotation pipeline: turns expert trajectories into CoT-labelled samples
//! and augments instructions with perturbed spatial priors.

mod build;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::geometry::{ImageBox, ImagePoint};
use crate::guide::{resample_trace, SpatialPrior};
use crate::reasoner::ReasonerError;
use crate::sim::{Action, SimError, TaskSpec};

pub use build::{
    build_dataset, dataset_stats, record_expert, write_samples_jsonl, write_stats_csv, AnnotatedSample, Dataset,
    DatasetStats, Skipped,
};

/// Aperture level whose crossing marks a grasp or release.
pub const KEYFRAME_THRESHOLD: f64 = 0.5;
/// Crossings closer than this to the previous keyframe are dropped.
pub const KEYFRAME_DEBOUNCE: u64 = 3;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("trajectory has no ticks")]
    EmptyTrajectory,
    #[error("trajectory tick {found} follows tick {previous}")]
    NonContiguous { previous: u64, found: u64 },
    #[error("motion window needs at least 2 positions, got {0}")]
    WindowTooShort(usize),
    #[error("window ends at position {end} but the trajectory has {len}")]
    WindowOutOfRange { end: usize, len: usize },
    #[error("invalid recipe: {0}")]
    Recipe(String),
    #[error("no trajectories to annotate")]
    NoTrajectories,
    #[error("replay diverged from the recorded state at tick {0}")]
    ReplayDiverged(u64),
    #[error("CoT at tick {0} does not survive a codec round trip")]
    RoundTrip(u64),
    #[error("target object {0} is not in view")]
    TargetNotVisible(u32),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// Digest of the state the action was taken in.
    pub state_digest: String,
    pub action: Action,
    /// Aperture after the action.
    pub aperture: f64,
    /// Gripper image position after the action.
    pub gripper: ImagePoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub scenario: String,
    pub seed: u64,
    pub task: TaskSpec,
    pub start_aperture: f64,
    pub start_gripper: ImagePoint,
    pub ticks: Vec<TickRecord>,
}

impl TrajectoryRecord {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let first = self.ticks.first().ok_or(DatagenError::EmptyTrajectory)?;
        if first.tick != 0 {
            return Err(DatagenError::NonContiguous {
                previous: 0,
                found: first.tick,
            });
        }
        for w in self.ticks.windows(2) {
            if w[1].tick != w[0].tick + 1 {
                return Err(DatagenError::NonContiguous {
                    previous: w[0].tick,
                    found: w[1].tick,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    /// Gripper positions, one per state: index 0 is the start, index `i + 1`
    /// follows the action at tick `i`.
    pub fn positions(&self) -> Vec<ImagePoint> {
        std::iter::once(self.start_gripper)
            .chain(self.ticks.iter().map(|t| t.gripper))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeKind {
    Grasp,
    Release,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframe {
    pub tick: u64,
    pub kind: KeyframeKind,
}

/// Ticks whose action carried the aperture across the threshold.
pub fn extract_keyframes(traj: &TrajectoryRecord) -> Vec<Keyframe> {
    let mut out: Vec<Keyframe> = Vec::new();
    let mut before = traj.start_aperture;
    for t in &traj.ticks {
        let kind = if before >= KEYFRAME_THRESHOLD && t.aperture < KEYFRAME_THRESHOLD {
            Some(KeyframeKind::Grasp)
        } else if before < KEYFRAME_THRESHOLD && t.aperture >= KEYFRAME_THRESHOLD {
            Some(KeyframeKind::Release)
        } else {
            None
        };
        before = t.aperture;
        let Some(kind) = kind else { continue };
        if out.last().is_some_and(|k| t.tick - k.tick < KEYFRAME_DEBOUNCE) {
            continue;
        }
        out.push(Keyframe { tick: t.tick, kind });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionProjection {
    pub affordance: ImagePoint,
    pub path: Vec<ImagePoint>,
    /// The window had no motion; `path` repeats the affordance.
    pub degenerate: bool,
}

/// Projects the gripper motion over positions `window` (indices into
/// [`TrajectoryRecord::positions`]) to an affordance and an `m`-point path.
pub fn project_motion(
    traj: &TrajectoryRecord,
    window: std::ops::RangeInclusive<usize>,
    m: usize,
) -> Result<MotionProjection, DatagenError> {
    let positions = traj.positions();
    let (start, end) = (*window.start(), *window.end());
    if end >= positions.len() {
        return Err(DatagenError::WindowOutOfRange {
            end,
            len: positions.len(),
        });
    }
    project_points(positions.get(start..=end).unwrap_or(&[]), m)
}

/// [`project_motion`] over an explicit point sequence.
pub fn project_points(points: &[ImagePoint], m: usize) -> Result<MotionProjection, DatagenError> {
    if points.len() < 2 {
        return Err(DatagenError::WindowTooShort(points.len()));
    }
    let affordance = *points.last().expect("len >= 2");
    match resample_trace(points, m) {
        Ok(path) => Ok(MotionProjection {
            affordance,
            path,
            degenerate: false,
        }),
        Err(crate::guide::PriorError::ZeroLengthTrace) => Ok(MotionProjection {
            affordance,
            path: vec![affordance; m],
            degenerate: true,
        }),
        Err(e) => Err(DatagenError::Recipe(e.to_string())),
    }
}

/// Jitter standard deviations, in normalized image units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterConfig {
    pub point: f64,
    /// Per box corner coordinate.
    #[serde(rename = "box")]
    pub bbox: f64,
    /// Per trace waypoint coordinate.
    pub trace: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            point: 0.01,
            bbox: 0.01,
            trace: 0.01,
        }
    }
}

fn jitter(p: ImagePoint, sigma: f64, rng: &mut ChaCha8Rng) -> ImagePoint {
    if sigma == 0.0 {
        return p;
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    ImagePoint::new(p.x + n.sample(rng), p.y + n.sample(rng)).clamped()
}

/// Gaussian jitter on every coordinate, clamped to the unit square; box
/// corners are re-ordered if the jitter swapped them.
pub fn perturb_annotation(annotation: &SpatialPrior, noise: &JitterConfig, seed: u64) -> SpatialPrior {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match annotation {
        SpatialPrior::Point { point } => SpatialPrior::Point {
            point: jitter(*point, noise.point, &mut rng),
        },
        SpatialPrior::Box { bbox } => {
            let [lo, hi] = bbox.corners();
            let (a, b) = (jitter(lo, noise.bbox, &mut rng), jitter(hi, noise.bbox, &mut rng));
            SpatialPrior::Box {
                bbox: ImageBox::from_corners(a, b),
            }
        }
        SpatialPrior::Trace { points } => SpatialPrior::Trace {
            points: points.iter().map(|p| jitter(*p, noise.trace, &mut rng)).collect(),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    None,
    PickBox,
    PlaceBox,
    PickAndPlace,
    #[serde(rename = "affordance_2d")]
    Affordance2d,
    #[serde(rename = "gripper_path_2d")]
    GripperPath2d,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 6] = [
        InteractionMode::None,
        InteractionMode::PickBox,
        InteractionMode::PlaceBox,
        InteractionMode::PickAndPlace,
        InteractionMode::Affordance2d,
        InteractionMode::GripperPath2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InteractionMode::None => "none",
            InteractionMode::PickBox => "pick_box",
            InteractionMode::PlaceBox => "place_box",
            InteractionMode::PickAndPlace => "pick_and_place",
            InteractionMode::Affordance2d => "affordance_2d",
            InteractionMode::GripperPath2d => "gripper_path_2d",
        }
    }
}

/// Mode table sampled once augmentation is enabled. `none` is part of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeWeights {
    pub none: f64,
    pub pick_box: f64,
    pub place_box: f64,
    pub pick_and_place: f64,
    pub affordance_2d: f64,
    pub gripper_path_2d: f64,
}

impl Default for ModeWeights {
    fn default() -> Self {
        Self {
            none: 0.40,
            pick_box: 0.20,
            place_box: 0.12,
            pick_and_place: 0.12,
            affordance_2d: 0.10,
            gripper_path_2d: 0.06,
        }
    }
}

impl ModeWeights {
    /// Weights in [`InteractionMode::ALL`] order.
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.none,
            self.pick_box,
            self.place_box,
            self.pick_and_place,
            self.affordance_2d,
            self.gripper_path_2d,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecipeConfig {
    pub enable_probability: f64,
    pub weights: ModeWeights,
    pub jitter: JitterConfig,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        Self {
            enable_probability: 0.5,
            weights: ModeWeights::default(),
            jitter: JitterConfig::default(),
        }
    }
}

impl RecipeConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::Recipe(m));
        if !(0.0..=1.0).contains(&self.enable_probability) {
            return bad(format!("enable_probability {} outside [0, 1]", self.enable_probability));
        }
        let w = self.weights.as_array();
        if let Some((m, v)) = InteractionMode::ALL.iter().zip(w).find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("weight for {} is {v}", m.name()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("mode weights sum to {sum}, expected 1"));
        }
        let j = &self.jitter;
        if [j.point, j.bbox, j.trace].iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("jitter sigmas must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Marginal probability of each mode, in [`InteractionMode::ALL`] order.
    pub fn marginals(&self) -> [f64; 6] {
        let e = self.enable_probability;
        let mut m = self.weights.as_array().map(|w| e * w);
        m[0] += 1.0 - e;
        m
    }
}

/// Draws an interaction mode: augmentation is enabled with
/// `enable_probability`, then a mode comes from the weight table.
pub fn sample_interaction_mode(recipe: &RecipeConfig, seed: u64) -> InteractionMode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random::<f64>() >= recipe.enable_probability {
        return InteractionMode::None;
    }
    let table = WeightedIndex::new(recipe.weights.as_array()).expect("recipe validated");
    InteractionMode::ALL[table.sample(&mut rng)]
}
