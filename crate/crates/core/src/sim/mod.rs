//! Deterministic 2D tabletop world.
//!
//! The table is the unit square seen top-down by the main camera, so world
//! and image coordinates coincide until a sensor shift is applied. The
//! gripper starts at [`HOME`]; objects are axis-aligned squares.

pub mod expert;
pub mod lexicon;
pub mod perturb;
pub mod scenario;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImageBox, ImagePoint};
pub use expert::expert_policy;
pub use perturb::{DistractorKind, LanguageShift, LightingShift, ObjectShift, PerturbationConfig, RobotStateShift, SensorShift};
pub use scenario::{reset, ScenarioDef, ScenarioRegistry};

pub const HOME: ImagePoint = ImagePoint::new(0.5, 0.9);
pub const MAX_STEP: f64 = 0.05;
pub const MAX_APERTURE_CHANGE: f64 = 0.25;
pub const GRASP_EPS: f64 = 0.03;
pub const PLACE_EPS: f64 = 0.05;
/// Extra margin around an obstacle that the gripper must not enter.
pub const OBSTACLE_INFLATION: f64 = 0.02;
pub const WRIST_RADIUS: f64 = 0.2;
/// Held ticks after which a grasped object counts as lifted.
pub const LIFT_TICKS: u32 = 3;
pub const DEFAULT_HALF_EXTENT: f64 = 0.04;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("could not place objects for scenario `{0}` after 1000 attempts")]
    InfeasiblePlacement(String),
    #[error("non-finite action {0:?}")]
    NonFiniteAction([f64; 3]),
    #[error("invalid scenario definition: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Perturbation(#[from] perturb::PerturbationError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub color: String,
    pub position: ImagePoint,
    pub half_extent: f64,
    pub seen_in_training: bool,
}

impl SceneObject {
    pub fn extent(&self) -> ImageBox {
        ImageBox::around(self.position, self.half_extent)
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.color, self.category)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub position: ImagePoint,
    /// 1 is fully open.
    pub aperture: f64,
    pub held_object: Option<u32>,
    /// Steps the current object has been held for.
    pub held_ticks: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<SceneObject>,
    pub gripper: GripperState,
    pub tick: u64,
    /// Seeds the actuation noise; each step derives its own stream.
    pub noise_seed: u64,
    /// Ids of objects whose inflated extent the gripper has entered, sorted.
    pub contacts: Vec<u32>,
}

impl SceneState {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pick,
    PickAndPlace,
    AvoidObstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    pub target_id: u32,
    /// World-frame goal region; for pick tasks the target's initial extent.
    pub goal_zone: ImageBox,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub destination_id: Option<u32>,
    #[serde(default)]
    pub obstacle_id: Option<u32>,
}

/// `(dx, dy, grip)`, each in `[-1, 1]`; grip −1 closes, +1 opens.
pub type Action = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewObject {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: ImageBox,
    pub color: Option<String>,
    /// Simulator id, kept for evaluation bookkeeping. Policies must not
    /// read it.
    pub object_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WristObject {
    pub label: String,
    pub offset: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proprio {
    pub position: ImagePoint,
    pub aperture: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub main_view: Vec<ViewObject>,
    pub wrist_view: Vec<WristObject>,
    pub proprio: Proprio,
    /// Gripper as seen in the main view.
    pub gripper_image: ImagePoint,
    pub tick: u64,
}

/// Mixes seed material into one 64-bit value (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(a, b))
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

/// Slab test for the segment `a → b` against a box.
pub(crate) fn segment_hits_box(a: &ImagePoint, b: &ImagePoint, bx: &ImageBox) -> bool {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, d, lo, hi) in [(a.x, b.x - a.x, bx.x_min, bx.x_max), (a.y, b.y - a.y, bx.y_min, bx.y_max)] {
        if d.abs() < 1e-15 {
            if p < lo || p > hi {
                return false;
            }
        } else {
            let (mut u0, mut u1) = ((lo - p) / d, (hi - p) / d);
            if u0 > u1 {
                std::mem::swap(&mut u0, &mut u1);
            }
            t0 = t0.max(u0);
            t1 = t1.min(u1);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

pub fn inflated_extent(o: &SceneObject) -> ImageBox {
    ImageBox::around(o.position, o.half_extent + OBSTACLE_INFLATION)
}

/// Advances the world by one action. Pure: the input state is untouched.
pub fn step(state: &SceneState, action: Action, perturbation: &PerturbationConfig) -> Result<SceneState, SimError> {
    if action.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteAction(action));
    }
    let [dx, dy, grip] = action.map(|v| v.clamp(-1.0, 1.0));
    let mut next = state.clone();
    let g = &mut next.gripper;
    let start = g.position;

    let sigma = perturbation.actuation_noise();
    let (nx, ny) = if sigma > 0.0 {
        let mut rng = rng_for(state.noise_seed, state.tick);
        (gaussian(&mut rng, sigma), gaussian(&mut rng, sigma))
    } else {
        (0.0, 0.0)
    };
    let margin = g
        .held_object
        .and_then(|id| state.object(id))
        .map_or(0.0, |o| o.half_extent);
    g.position = ImagePoint::new(
        (start.x + dx * MAX_STEP + nx).clamp(margin, 1.0 - margin),
        (start.y + dy * MAX_STEP + ny).clamp(margin, 1.0 - margin),
    );

    let before = g.aperture;
    let target = (grip + 1.0) / 2.0;
    g.aperture = (before + (target - before).clamp(-MAX_APERTURE_CHANGE, MAX_APERTURE_CHANGE)).clamp(0.0, 1.0);

    match g.held_object {
        Some(_) if g.aperture >= 0.5 => {
            g.held_object = None;
            g.held_ticks = 0;
        }
        Some(_) => g.held_ticks += 1,
        None if before >= 0.5 && g.aperture < 0.5 => {
            let pos = g.position;
            let nearest = next
                .objects
                .iter()
                .map(|o| (o.position.distance(&pos), o.id))
                .filter(|(d, _)| *d <= GRASP_EPS)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, id)) = nearest {
                next.gripper.held_object = Some(id);
                next.gripper.held_ticks = 0;
            }
        }
        None => {}
    }

    let pos = next.gripper.position;
    if let Some(id) = next.gripper.held_object {
        if let Some(o) = next.objects.iter_mut().find(|o| o.id == id) {
            o.position = pos;
        }
    }
    for o in &next.objects {
        if Some(o.id) == next.gripper.held_object || next.contacts.contains(&o.id) {
            continue;
        }
        if segment_hits_box(&start, &pos, &inflated_extent(o)) {
            next.contacts.push(o.id);
        }
    }
    next.contacts.sort_unstable();
    next.tick += 1;
    Ok(next)
}

/// Agent-visible view of the state under the configured shifts. `seed`
/// drives lighting noise; each tick draws fresh noise.
pub fn observe(state: &SceneState, perturbation: &PerturbationConfig, seed: u64) -> Observation {
    let sensor = perturbation.sensor_or_identity();
    let mut rng = rng_for(seed, state.tick.wrapping_add(1 << 40));
    let mut main_view = Vec::with_capacity(state.objects.len());
    for o in &state.objects {
        let mut b = sensor.apply_box(&o.extent());
        let mut color = Some(o.color.clone());
        if let Some(l) = &perturbation.lighting {
            let (ex, ey) = (gaussian(&mut rng, l.position_noise), gaussian(&mut rng, l.position_noise));
            b = ImageBox::new(b.x_min + ex, b.y_min + ey, b.x_max + ex, b.y_max + ey);
            if l.color_dropout > 0.0 && rand::Rng::random::<f64>(&mut rng) < l.color_dropout {
                color = None;
            }
        }
        let clamped = ImageBox::new(
            b.x_min.clamp(0.0, 1.0),
            b.y_min.clamp(0.0, 1.0),
            b.x_max.clamp(0.0, 1.0),
            b.y_max.clamp(0.0, 1.0),
        );
        // out of frame
        if clamped.width() < 0.005 || clamped.height() < 0.005 {
            continue;
        }
        main_view.push(ViewObject {
            label: o.category.clone(),
            bbox: clamped,
            color,
            object_id: o.id,
        });
    }
    let gp = state.gripper.position;
    let mut wrist_view: Vec<(f64, WristObject)> = state
        .objects
        .iter()
        .filter_map(|o| {
            let d = o.position.distance(&gp);
            (d <= WRIST_RADIUS).then(|| {
                (
                    d,
                    WristObject {
                        label: o.category.clone(),
                        offset: [o.position.x - gp.x, o.position.y - gp.y],
                    },
                )
            })
        })
        .collect();
    wrist_view.sort_by(|a, b| a.0.total_cmp(&b.0));
    Observation {
        main_view,
        wrist_view: wrist_view.into_iter().map(|(_, w)| w).collect(),
        proprio: Proprio {
            position: gp,
            aperture: state.gripper.aperture,
        },
        gripper_image: sensor.apply(&gp).clamped(),
        tick: state.tick,
    }
}

pub fn check_success(state: &SceneState, task: &TaskSpec) -> bool {
    let g = &state.gripper;
    match task.task_kind {
        TaskKind::Pick => g.held_object == Some(task.target_id) && g.held_ticks >= LIFT_TICKS,
        TaskKind::AvoidObstacle => {
            g.held_object == Some(task.target_id)
                && g.held_ticks >= LIFT_TICKS
                && task.obstacle_id.is_none_or(|id| !state.contacts.contains(&id))
        }
        TaskKind::PickAndPlace => {
            let Some(target) = state.object(task.target_id) else {
                return false;
            };
            g.held_object.is_none()
                && g.aperture >= 0.5
                && target.position.distance(&task.goal_zone.center()) <= PLACE_EPS
        }
    }
}

/// Whether the gripper has touched the task's obstacle.
pub fn obstacle_contact(state: &SceneState, task: &TaskSpec) -> bool {
    task.obstacle_id.is_some_and(|id| state.contacts.contains(&id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneState {
        SceneState {
            objects: vec![SceneObject {
                id: 0,
                category: "block".into(),
                color: "red".into(),
                position: ImagePoint::new(0.3, 0.3),
                half_extent: 0.04,
                seen_in_training: true,
            }],
            gripper: GripperState {
                position: HOME,
                aperture: 1.0,
                held_object: None,
                held_ticks: 0,
            },
            tick: 0,
            noise_seed: 1,
            contacts: vec![],
        }
    }

    #[test]
    fn open_noop_only_touches_aperture() {
        let mut s = scene();
        s.gripper.aperture = 0.5;
        let n = step(&s, [0.0, 0.0, 1.0], &PerturbationConfig::none()).unwrap();
        assert_eq!(n.gripper.position, s.gripper.position);
        assert_eq!(n.objects, s.objects);
        assert_eq!(n.gripper.aperture, 0.75);
    }

    #[test]
    fn closing_at_center_grasps() {
        let mut s = scene();
        s.gripper.position = ImagePoint::new(0.3, 0.3);
        let p = PerturbationConfig::none();
        for _ in 0..2 {
            s = step(&s, [0.0, 0.0, -1.0], &p).unwrap();
            assert_eq!(s.gripper.held_object, None);
        }
        s = step(&s, [0.0, 0.0, -1.0], &p).unwrap();
        assert_eq!(s.gripper.held_object, Some(0));
        assert!(s.gripper.aperture < 0.5);
        for _ in 0..4 {
            s = step(&s, [1.0, 0.5, -1.0], &p).unwrap();
            assert_eq!(s.objects[0].position, s.gripper.position);
        }
    }

    #[test]
    fn non_finite_action_is_rejected() {
        assert!(step(&scene(), [f64::NAN, 0.0, 0.0], &PerturbationConfig::none()).is_err());
    }

    #[test]
    fn full_dropout_hides_colors() {
        let cfg = PerturbationConfig {
            lighting: Some(LightingShift {
                position_noise: 0.0,
                color_dropout: 1.0,
            }),
            ..Default::default()
        };
        assert!(observe(&scene(), &cfg, 3).main_view.iter().all(|v| v.color.is_none()));
    }

    #[test]
    fn identity_view_matches_extents() {
        let s = scene();
        let obs = observe(&s, &PerturbationConfig::none(), 0);
        assert_eq!(obs.main_view[0].bbox, s.objects[0].extent());
        assert!(obs.wrist_view.is_empty());
    }
}
