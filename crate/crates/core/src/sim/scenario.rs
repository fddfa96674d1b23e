//! Declarative scenario definitions and the seeded `reset`.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{paraphrase_instruction, Lexicon, COLORS, SEEN_CATEGORIES, UNSEEN_CATEGORIES};
use super::perturb::{DistractorKind, PerturbationConfig};
use super::{
    mix_seed, rng_for, GripperState, SceneObject, SceneState, SimError, TaskKind, TaskSpec, DEFAULT_HALF_EXTENT,
    HOME, OBSTACLE_INFLATION,
};
use crate::geometry::{ImageBox, ImagePoint};

const MAX_ATTEMPTS: usize = 1000;
/// Minimum free space between object extents.
const MIN_GAP: f64 = 0.03;
/// Objects keep this distance from the gripper's start.
const START_CLEARANCE: f64 = 0.15;

fn default_half_extent() -> f64 {
    DEFAULT_HALF_EXTENT
}

fn default_region() -> ImageBox {
    ImageBox::new(0.08, 0.08, 0.92, 0.68)
}

fn default_obstacle_clearance() -> [f64; 2] {
    [0.005, 0.03]
}

/// One scenario family. Loadable from TOML; see `docs/format.md` for the
/// schema of the built-ins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDef {
    pub id: String,
    pub task_kind: TaskKind,
    /// Candidate categories for the target; empty means any seen category
    /// except those used as destinations.
    #[serde(default)]
    pub target_categories: Vec<String>,
    /// Candidate colors for the target; empty means any color.
    #[serde(default)]
    pub target_colors: Vec<String>,
    #[serde(default)]
    pub unseen_target: bool,
    #[serde(default)]
    pub destination_categories: Vec<String>,
    #[serde(default)]
    pub destination_colors: Vec<String>,
    #[serde(default)]
    pub destination_half_extent: Option<f64>,
    #[serde(default)]
    pub obstacle_categories: Vec<String>,
    #[serde(default)]
    pub obstacle_half_extent: Option<f64>,
    /// Range of free space between the straight approach line and the
    /// obstacle's inflated extent.
    #[serde(default = "default_obstacle_clearance")]
    pub obstacle_clearance: [f64; 2],
    /// Identical copy of the target (same category and color).
    #[serde(default)]
    pub twin: bool,
    /// Same category as the target, different colors.
    #[serde(default)]
    pub same_category_other_colors: usize,
    /// Objects of other categories.
    #[serde(default)]
    pub distractors: usize,
    #[serde(default = "default_half_extent")]
    pub half_extent: f64,
    /// Where object centers may be placed.
    #[serde(default = "default_region")]
    pub region: ImageBox,
    /// Verb used for place instructions.
    #[serde(default)]
    pub place_verb: Option<String>,
}

impl ScenarioDef {
    fn base(id: &str, task_kind: TaskKind) -> Self {
        Self {
            id: id.into(),
            task_kind,
            target_categories: Vec::new(),
            target_colors: Vec::new(),
            unseen_target: false,
            destination_categories: Vec::new(),
            destination_colors: Vec::new(),
            destination_half_extent: None,
            obstacle_categories: Vec::new(),
            obstacle_half_extent: None,
            obstacle_clearance: default_obstacle_clearance(),
            twin: false,
            same_category_other_colors: 0,
            distractors: 0,
            half_extent: DEFAULT_HALF_EXTENT,
            region: default_region(),
            place_verb: None,
        }
    }

    pub fn builtins() -> Vec<ScenarioDef> {
        let pickables = || vec!["block".to_string(), "cup".to_string()];
        vec![
            ScenarioDef {
                target_categories: pickables(),
                distractors: 2,
                ..Self::base("single_target", TaskKind::Pick)
            },
            ScenarioDef {
                unseen_target: true,
                distractors: 2,
                ..Self::base("unseen_object", TaskKind::Pick)
            },
            ScenarioDef {
                target_categories: vec!["block".into()],
                target_colors: vec!["red".into()],
                twin: true,
                ..Self::base("two_red_blocks", TaskKind::Pick)
            },
            ScenarioDef {
                target_categories: pickables(),
                twin: true,
                same_category_other_colors: 2,
                ..Self::base("color_distractor", TaskKind::Pick)
            },
            ScenarioDef {
                target_categories: pickables(),
                twin: true,
                distractors: 1,
                ..Self::base("position_distractor", TaskKind::Pick)
            },
            ScenarioDef {
                target_categories: pickables(),
                obstacle_categories: vec!["vase".into()],
                obstacle_half_extent: Some(0.05),
                ..Self::base("obstacle", TaskKind::AvoidObstacle)
            },
            ScenarioDef {
                target_categories: pickables(),
                destination_categories: vec!["plate".into(), "bowl".into()],
                destination_half_extent: Some(0.06),
                distractors: 1,
                ..Self::base("put_on_plate", TaskKind::PickAndPlace)
            },
            ScenarioDef {
                target_categories: vec!["block".into()],
                target_colors: vec!["green".into()],
                destination_categories: vec!["block".into()],
                destination_colors: vec!["yellow".into()],
                place_verb: Some("stack".into()),
                ..Self::base("stack_blocks", TaskKind::PickAndPlace)
            },
        ]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadScenario(m));
        if !(self.half_extent > 0.0 && self.half_extent < 0.2) {
            return bad(format!("{}: half_extent must be in (0, 0.2)", self.id));
        }
        if self.task_kind == TaskKind::PickAndPlace && self.destination_categories.is_empty() {
            return bad(format!("{}: pick_and_place needs destination_categories", self.id));
        }
        if self.task_kind == TaskKind::AvoidObstacle && self.obstacle_categories.is_empty() {
            return bad(format!("{}: avoid_obstacle needs obstacle_categories", self.id));
        }
        if !self.region.is_well_ordered() || !self.region.in_unit_square() {
            return bad(format!("{}: region must be a well-ordered box in the unit square", self.id));
        }
        let [lo, hi] = self.obstacle_clearance;
        if !(lo >= 0.0 && lo <= hi) {
            return bad(format!("{}: obstacle_clearance must satisfy 0 ≤ lo ≤ hi", self.id));
        }
        if self.same_category_other_colors + 1 >= COLORS.len() {
            return bad(format!("{}: not enough colors for the requested variants", self.id));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScenarioRegistry {
    scenarios: BTreeMap<String, ScenarioDef>,
}

#[derive(Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<ScenarioDef>,
}

impl ScenarioRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        for s in ScenarioDef::builtins() {
            r.scenarios.insert(s.id.clone(), s);
        }
        r
    }

    pub fn insert(&mut self, def: ScenarioDef) -> Result<(), SimError> {
        def.validate()?;
        self.scenarios.insert(def.id.clone(), def);
        Ok(())
    }

    /// Adds every `[[scenario]]` table of a TOML document.
    pub fn load_toml(&mut self, text: &str) -> Result<usize, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::BadScenario(e.to_string()))?;
        let n = file.scenario.len();
        for s in file.scenario {
            self.insert(s)?;
        }
        Ok(n)
    }

    pub fn get(&self, id: &str) -> Result<&ScenarioDef, SimError> {
        self.scenarios.get(id).ok_or_else(|| SimError::UnknownScenario(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scenarios.keys().map(String::as_str)
    }
}

struct Placer<'a> {
    rng: ChaCha8Rng,
    placed: Vec<SceneObject>,
    start: ImagePoint,
    region: ImageBox,
    attempts: usize,
    scenario: &'a str,
}

impl Placer<'_> {
    fn fits(&self, pos: ImagePoint, h: f64) -> bool {
        let b = ImageBox::around(pos, h);
        if !b.in_unit_square() || pos.distance(&self.start) < START_CLEARANCE + h {
            return false;
        }
        self.placed.iter().all(|o| {
            (o.position.x - pos.x).abs() >= o.half_extent + h + MIN_GAP
                || (o.position.y - pos.y).abs() >= o.half_extent + h + MIN_GAP
        })
    }

    fn random_position(&mut self, h: f64) -> Result<ImagePoint, SimError> {
        let r = self.region;
        loop {
            self.attempts += 1;
            if self.attempts > MAX_ATTEMPTS {
                return Err(SimError::InfeasiblePlacement(self.scenario.to_string()));
            }
            let p = ImagePoint::new(
                self.rng.random_range(r.x_min.max(h)..=r.x_max.min(1.0 - h)),
                self.rng.random_range(r.y_min.max(h)..=r.y_max.min(1.0 - h)),
            );
            if self.fits(p, h) {
                return Ok(p);
            }
        }
    }

    fn add(&mut self, category: &str, color: &str, position: ImagePoint, h: f64, seen: bool) -> u32 {
        let id = self.placed.len() as u32;
        self.placed.push(SceneObject {
            id,
            category: category.to_string(),
            color: color.to_string(),
            position,
            half_extent: h,
            seen_in_training: seen,
        });
        id
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &'a [String], fallback: &'a [&'a str]) -> String {
    if options.is_empty() {
        fallback.choose(rng).expect("non-empty").to_string()
    } else {
        options.choose(rng).expect("non-empty").clone()
    }
}

fn color_other_than(rng: &mut ChaCha8Rng, used: &[String]) -> String {
    let free: Vec<&&str> = COLORS.iter().filter(|c| !used.iter().any(|u| u == **c)).collect();
    free.choose(rng).map_or_else(|| COLORS[0].to_string(), |c| c.to_string())
}

/// Builds the initial state and task for `(seed, scenario, perturbation)`.
pub fn reset(
    registry: &ScenarioRegistry,
    seed: u64,
    scenario: &str,
    perturbation: &PerturbationConfig,
) -> Result<(SceneState, TaskSpec), SimError> {
    perturbation.validate()?;
    let mut def = registry.get(scenario)?.clone();
    if let Some(shift) = &perturbation.objects {
        if shift.unseen_category {
            def.unseen_target = true;
        }
        match shift.distractor {
            Some(DistractorKind::Color) => {
                def.twin = true;
                def.same_category_other_colors = def.same_category_other_colors.max(2);
            }
            Some(DistractorKind::Position) => def.twin = true,
            None => {}
        }
    }
    let mut rng = rng_for(seed, 0x5ce7_a210);

    let mut start = HOME;
    if let Some(r) = perturbation.robot_state.filter(|r| r.init_radius > 0.0) {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = r.init_radius * rng.random::<f64>().sqrt();
        start = ImagePoint::new(start.x + radius * angle.cos(), start.y + radius * angle.sin()).clamped();
    }

    let h = def.half_extent;
    let category = if def.unseen_target {
        UNSEEN_CATEGORIES.choose(&mut rng).expect("non-empty").to_string()
    } else {
        let excluded = &def.destination_categories;
        let fallback: Vec<&str> = SEEN_CATEGORIES
            .iter()
            .copied()
            .filter(|c| !excluded.iter().any(|e| e == c) && *c != "plate" && *c != "bowl")
            .collect();
        pick(&mut rng, &def.target_categories, &fallback)
    };
    let color = pick(&mut rng, &def.target_colors, COLORS);

    let mut p = Placer {
        rng,
        placed: Vec::new(),
        start,
        region: def.region,
        attempts: 0,
        scenario: &def.id,
    };

    let target_pos = loop {
        let pos = p.random_position(h)?;
        if def.task_kind != TaskKind::AvoidObstacle || pos.distance(&start) >= 0.4 {
            break pos;
        }
    };
    let mut target_id = p.add(&category, &color, target_pos, h, !def.unseen_target);

    let mut obstacle_id = None;
    if def.task_kind == TaskKind::AvoidObstacle {
        let oh = def.obstacle_half_extent.unwrap_or(h);
        let ocat = pick(&mut p.rng, &def.obstacle_categories, SEEN_CATEGORIES);
        let ocolor = color_other_than(&mut p.rng, std::slice::from_ref(&color));
        let (dx, dy) = (target_pos.x - start.x, target_pos.y - start.y);
        let len = dx.hypot(dy);
        let n = (-dy / len, dx / len);
        let pos = loop {
            p.attempts += 1;
            if p.attempts > MAX_ATTEMPTS {
                return Err(SimError::InfeasiblePlacement(def.id.clone()));
            }
            let f = p.rng.random_range(0.35..=0.65);
            let [lo, hi] = def.obstacle_clearance;
            let c = if hi > lo { p.rng.random_range(lo..hi) } else { lo };
            let side = if p.rng.random::<bool>() { 1.0 } else { -1.0 };
            let d = (oh + OBSTACLE_INFLATION) * (n.0.abs() + n.1.abs()) + c;
            let pos = ImagePoint::new(start.x + f * dx + side * d * n.0, start.y + f * dy + side * d * n.1);
            if p.fits(pos, oh) {
                break pos;
            }
        };
        obstacle_id = Some(p.add(&ocat, &ocolor, pos, oh, true));
    }

    let mut destination_id = None;
    if def.task_kind == TaskKind::PickAndPlace {
        let dh = def.destination_half_extent.unwrap_or(h);
        let dcat = pick(&mut p.rng, &def.destination_categories, SEEN_CATEGORIES);
        let dcolor = if def.destination_colors.is_empty() {
            color_other_than(&mut p.rng, std::slice::from_ref(&color))
        } else {
            pick(&mut p.rng, &def.destination_colors, COLORS)
        };
        let pos = p.random_position(dh)?;
        destination_id = Some(p.add(&dcat, &dcolor, pos, dh, true));
    }

    if def.twin {
        let pos = p.random_position(h)?;
        let twin_id = p.add(&category, &color, pos, h, !def.unseen_target);
        // Balanced assignment: even seeds make the left twin the target.
        let left_first = {
            let (a, b) = (&p.placed[target_id as usize].position, &pos);
            (a.x, a.y) <= (b.x, b.y)
        };
        let want_left = seed.is_multiple_of(2);
        if left_first != want_left {
            target_id = twin_id;
        }
    }

    let mut used_colors = vec![color.clone()];
    for _ in 0..def.same_category_other_colors {
        let c = color_other_than(&mut p.rng, &used_colors);
        used_colors.push(c.clone());
        let pos = p.random_position(h)?;
        p.add(&category, &c, pos, h, !def.unseen_target);
    }

    let mut used_categories: Vec<String> = p.placed.iter().map(|o| o.category.clone()).collect();
    for _ in 0..def.distractors {
        let options: Vec<&str> = SEEN_CATEGORIES
            .iter()
            .copied()
            .filter(|c| !used_categories.iter().any(|u| u == c))
            .collect();
        let Some(cat) = options.choose(&mut p.rng).map(|c| c.to_string()) else {
            break;
        };
        let c = COLORS.choose(&mut p.rng).expect("non-empty").to_string();
        let pos = p.random_position(h)?;
        p.add(&cat, &c, pos, h, true);
        used_categories.push(cat);
    }

    let target = &p.placed[target_id as usize];
    let np = |o: &SceneObject| format!("{} {}", o.color, o.category);
    let mut instruction = match def.task_kind {
        TaskKind::Pick => format!("pick the {}", np(target)),
        TaskKind::PickAndPlace => {
            let d = &p.placed[destination_id.expect("set above") as usize];
            let verb = def.place_verb.as_deref().unwrap_or("put");
            let prep = if d.category == "bowl" { "in" } else { "on" };
            format!("{verb} the {} {prep} the {}", np(target), np(d))
        }
        TaskKind::AvoidObstacle => {
            let o = &p.placed[obstacle_id.expect("set above") as usize];
            format!("pick the {} avoiding the {}", np(target), np(o))
        }
    };
    if let Some(lang) = &perturbation.language {
        instruction = paraphrase_instruction(&Lexicon::default(), &instruction, mix_seed(lang.lexicon_seed, seed))
            .expect("scenario instructions follow the template grammar");
    }
    let goal_zone = match destination_id {
        Some(id) => p.placed[id as usize].extent(),
        None => target.extent(),
    };
    let task = TaskSpec {
        instruction,
        target_id,
        goal_zone,
        task_kind: def.task_kind,
        destination_id,
        obstacle_id,
    };
    let state = SceneState {
        objects: p.placed,
        gripper: GripperState {
            position: start,
            aperture: 1.0,
            held_object: None,
            held_ticks: 0,
        },
        tick: 0,
        noise_seed: mix_seed(seed, 0xa11c_e5ee),
        contacts: Vec::new(),
    };
    Ok((state, task))
}
