//! Oracle "think" step: grounding, structured CoT planning, and the
//! fixed-layout reasoning memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ObjectRef, StructuredCot, PATH_WAYPOINTS};
use crate::geometry::{ImageBox, ImagePoint};
use crate::guide::{arc_length, resample_trace, GuidanceEvent, PriorKind, SpatialPrior};
use crate::sim::lexicon::{parse_instruction, NounPhrase, ParsedInstruction};
use crate::sim::{Observation, TaskKind, ViewObject};

pub const MEMORY_DIM: usize = 32;
/// Paths shorter than this count as "at the waypoint" for phase encoding.
pub const NEAR_PATH_LENGTH: f64 = 0.05;

pub mod layout {
    use std::ops::Range;
    pub const PICK_BOX: Range<usize> = 0..4;
    pub const AFFORDANCE: Range<usize> = 4..6;
    pub const PATH: Range<usize> = 6..16;
    pub const PHASE: Range<usize> = 16..20;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonerError {
    #[error("main view is empty")]
    EmptyView,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingRule {
    InstructionMatch,
    PointContainment,
    PointNearest,
    BoxIou,
    /// Held object while carrying.
    Held,
    /// Nothing matched; nearest object to the image center.
    CenterFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub picked: ObjectRef,
    /// Index into the observation's main view.
    pub index: usize,
    pub rule_used: GroundingRule,
    pub tie_broken: bool,
}

/// Priors currently in force, latest-wins per kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivePriors {
    pub point: Option<ImagePoint>,
    #[serde(rename = "box")]
    pub bbox: Option<ImageBox>,
    pub trace: Option<Vec<ImagePoint>>,
}

impl ActivePriors {
    pub fn is_empty(&self) -> bool {
        self.point.is_none() && self.bbox.is_none() && self.trace.is_none()
    }

    pub fn apply(&mut self, prior: &SpatialPrior) -> PriorKind {
        match prior {
            SpatialPrior::Point { point } => self.point = Some(*point),
            SpatialPrior::Box { bbox } => self.bbox = Some(*bbox),
            SpatialPrior::Trace { points } => self.trace = Some(points.clone()),
        }
        prior.kind()
    }

    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a GuidanceEvent>) -> Self {
        let mut p = Self::default();
        for e in events {
            p.apply(&e.prior);
        }
        p
    }

    /// A point and a box that disagree (point outside the box).
    pub fn conflict(&self) -> Option<String> {
        match (&self.point, &self.bbox) {
            (Some(p), Some(b)) if !b.contains(p) => Some(format!(
                "point ({:.3},{:.3}) lies outside box ({:.3},{:.3})-({:.3},{:.3}); box grounds, point sets the affordance",
                p.x, p.y, b.x_min, b.y_min, b.x_max, b.y_max
            )),
            _ => None,
        }
    }
}

pub fn object_ref(v: &ViewObject) -> ObjectRef {
    let label = match &v.color {
        Some(c) => format!("{c} {}", v.label),
        None => v.label.clone(),
    };
    ObjectRef::new(label, v.bbox)
}

fn leftmost(view: &[ViewObject], candidates: &[usize]) -> usize {
    *candidates
        .iter()
        .min_by(|&&a, &&b| {
            let (ca, cb) = (view[a].bbox.center(), view[b].bbox.center());
            ca.x.total_cmp(&cb.x).then(ca.y.total_cmp(&cb.y)).then(a.cmp(&b))
        })
        .expect("non-empty candidates")
}

/// Objects matching a noun phrase. Exact color matches win; objects whose
/// color was not observed are kept as a second tier.
fn matching(view: &[ViewObject], np: &NounPhrase, exclude: Option<usize>) -> Vec<usize> {
    let same_category: Vec<usize> = (0..view.len())
        .filter(|&i| Some(i) != exclude && view[i].label == np.category)
        .collect();
    let Some(color) = &np.color else {
        return same_category;
    };
    let exact: Vec<usize> = same_category
        .iter()
        .copied()
        .filter(|&i| view[i].color.as_deref() == Some(color))
        .collect();
    if !exact.is_empty() {
        return exact;
    }
    same_category.into_iter().filter(|&i| view[i].color.is_none()).collect()
}

fn center_fallback(view: &[ViewObject], exclude: Option<usize>) -> Option<usize> {
    let c = ImagePoint::new(0.5, 0.5);
    (0..view.len())
        .filter(|&i| Some(i) != exclude)
        .min_by(|&a, &b| {
            view[a].bbox.center().distance(&c).total_cmp(&view[b].bbox.center().distance(&c)).then(a.cmp(&b))
        })
}

fn result(view: &[ViewObject], index: usize, rule_used: GroundingRule, tie_broken: bool) -> GroundingResult {
    GroundingResult {
        picked: object_ref(&view[index]),
        index,
        rule_used,
        tie_broken,
    }
}

/// Picks the object the instruction and priors refer to.
pub fn ground(
    obs: &Observation,
    instruction: &str,
    priors: Option<&ActivePriors>,
) -> Result<GroundingResult, ReasonerError> {
    let view = &obs.main_view;
    if view.is_empty() {
        return Err(ReasonerError::EmptyView);
    }
    if let Some(p) = priors {
        if let Some(b) = &p.bbox {
            let best = view.iter().map(|v| v.bbox.iou(b)).fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..view.len()).filter(|&i| view[i].bbox.iou(b) == best).collect();
            return Ok(result(view, leftmost(view, &tied), GroundingRule::BoxIou, tied.len() > 1));
        }
        if let Some(pt) = &p.point {
            let containing: Vec<usize> = (0..view.len()).filter(|&i| view[i].bbox.contains(pt)).collect();
            if !containing.is_empty() {
                let min_area = containing.iter().map(|&i| view[i].bbox.area()).fold(f64::INFINITY, f64::min);
                let smallest: Vec<usize> = containing
                    .into_iter()
                    .filter(|&i| view[i].bbox.area() == min_area)
                    .collect();
                return Ok(result(
                    view,
                    leftmost(view, &smallest),
                    GroundingRule::PointContainment,
                    smallest.len() > 1,
                ));
            }
            let best = view
                .iter()
                .map(|v| v.bbox.center().distance(pt))
                .fold(f64::INFINITY, f64::min);
            let nearest: Vec<usize> = (0..view.len())
                .filter(|&i| view[i].bbox.center().distance(pt) == best)
                .collect();
            return Ok(result(view, leftmost(view, &nearest), GroundingRule::PointNearest, nearest.len() > 1));
        }
    }
    let candidates = parse_instruction(instruction)
        .map(|p| matching(view, &p.target, None))
        .unwrap_or_default();
    if candidates.is_empty() {
        let i = center_fallback(view, None).expect("view non-empty");
        return Ok(result(view, i, GroundingRule::CenterFallback, false));
    }
    Ok(result(
        view,
        leftmost(view, &candidates),
        GroundingRule::InstructionMatch,
        candidates.len() > 1,
    ))
}

/// Main-view index of the object in the gripper, if any.
pub fn held_index(obs: &Observation) -> Option<usize> {
    if obs.proprio.aperture >= 0.5 {
        return None;
    }
    let holding = obs
        .wrist_view
        .iter()
        .any(|w| w.offset[0].hypot(w.offset[1]) < 1e-9);
    if !holding {
        return None;
    }
    let g = obs.gripper_image;
    (0..obs.main_view.len()).min_by(|&a, &b| {
        obs.main_view[a]
            .bbox
            .center()
            .distance(&g)
            .total_cmp(&obs.main_view[b].bbox.center().distance(&g))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub cot: StructuredCot,
    pub grounding: GroundingResult,
    /// Issues worth logging: conflicting priors, grounding fallbacks.
    pub warnings: Vec<String>,
}

fn subtasks(kind: TaskKind, parsed: Option<&ParsedInstruction>, target: &str) -> Vec<String> {
    let grasp = format!("grasp the {target}");
    match kind {
        TaskKind::Pick | TaskKind::AvoidObstacle => vec![grasp, format!("lift the {target}")],
        TaskKind::PickAndPlace => {
            let (prep, dest) = parsed
                .and_then(|p| Some((p.preposition.clone()?, p.other.as_ref()?.text())))
                .unwrap_or_else(|| ("on".into(), "goal".into()));
            vec![grasp, format!("place the {target} {prep} the {dest}")]
        }
    }
}

fn linear_path(from: ImagePoint, to: ImagePoint, m: usize) -> Vec<ImagePoint> {
    (0..m)
        .map(|i| if i == m - 1 { to } else { from.lerp(&to, i as f64 / (m - 1) as f64) })
        .collect()
}

/// Builds the structured CoT. With `priors = None` the planner runs fully
/// autonomously.
pub fn plan_cot(
    obs: &Observation,
    instruction: &str,
    priors: Option<&ActivePriors>,
    task_kind: TaskKind,
) -> Result<Plan, ReasonerError> {
    let mut warnings = Vec::new();
    let parsed = parse_instruction(instruction).ok();
    if parsed.is_none() {
        warnings.push(format!("instruction `{instruction}` is outside the template grammar"));
    }
    let held = held_index(obs);
    let grounding = match held {
        Some(i) => result(&obs.main_view, i, GroundingRule::Held, false),
        None => ground(obs, instruction, priors)?,
    };
    if grounding.rule_used == GroundingRule::CenterFallback {
        warnings.push("no object matches the instruction; using the object nearest the image center".into());
    }
    if let Some(c) = priors.and_then(ActivePriors::conflict) {
        warnings.push(c);
    }
    let target_text = parsed.as_ref().map_or_else(|| grounding.picked.label.clone(), |p| p.target.text());
    let subtasks = subtasks(task_kind, parsed.as_ref(), &target_text);
    let current = if held.is_some() { subtasks[1].clone() } else { subtasks[0].clone() };

    let affordance = priors
        .and_then(|p| p.point)
        .unwrap_or_else(|| grounding.picked.bbox.center());
    let gripper = obs.gripper_image;
    let trace = priors.and_then(|p| p.trace.as_ref());
    let gripper_path = match trace {
        Some(t) if t.len() == PATH_WAYPOINTS => t.clone(),
        Some(t) => resample_trace(t, PATH_WAYPOINTS).unwrap_or_else(|_| vec![t[0]; PATH_WAYPOINTS]),
        None if held.is_none() => linear_path(gripper, affordance, PATH_WAYPOINTS),
        None => match task_kind {
            TaskKind::PickAndPlace => {
                let dest = destination(obs, parsed.as_ref(), grounding.index, &mut warnings);
                linear_path(gripper, dest, PATH_WAYPOINTS)
            }
            _ => vec![gripper; PATH_WAYPOINTS],
        },
    };
    let cot = StructuredCot {
        task: instruction.to_string(),
        subtasks,
        current,
        objects: obs.main_view.iter().map(object_ref).collect(),
        pick: Some(grounding.picked.clone()),
        affordance: Some(affordance),
        gripper_path,
    };
    Ok(Plan {
        cot,
        grounding,
        warnings,
    })
}

fn destination(
    obs: &Observation,
    parsed: Option<&ParsedInstruction>,
    picked: usize,
    warnings: &mut Vec<String>,
) -> ImagePoint {
    let view = &obs.main_view;
    let found = parsed
        .and_then(|p| p.other.as_ref())
        .map(|np| matching(view, np, Some(picked)))
        .filter(|c| !c.is_empty())
        .map(|c| leftmost(view, &c));
    match found.or_else(|| center_fallback(view, Some(picked))) {
        Some(i) if found.is_some() => view[i].bbox.center(),
        Some(i) => {
            warnings.push("no object matches the destination; using the object nearest the image center".into());
            view[i].bbox.center()
        }
        None => ImagePoint::new(0.5, 0.5),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Grasp,
    Transport,
    Release,
}

/// Motion phase implied by a CoT, or `None` when the current subtask is
/// not one of the template verbs.
pub fn phase_of(cot: &StructuredCot) -> Option<Phase> {
    let near = cot.gripper_path.is_empty() || arc_length(&cot.gripper_path) <= NEAR_PATH_LENGTH;
    let verb = cot.current.split(' ').next().unwrap_or("");
    match verb {
        "grasp" if near => Some(Phase::Grasp),
        "grasp" => Some(Phase::Approach),
        "lift" => Some(Phase::Grasp),
        "place" if near => Some(Phase::Release),
        "place" => Some(Phase::Transport),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningMemory {
    pub vector: Vec<f64>,
    pub produced_at_slow_tick: u64,
    pub cot: StructuredCot,
}

/// Fixed layout: pick box, affordance, five path waypoints, phase one-hot,
/// zero padding. Absent fields encode as zeros.
pub fn encode_memory(cot: &StructuredCot, slow_tick: u64) -> ReasoningMemory {
    let mut v = vec![0.0; MEMORY_DIM];
    if let Some(p) = &cot.pick {
        v[layout::PICK_BOX].copy_from_slice(&[p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max]);
    }
    if let Some(a) = &cot.affordance {
        v[layout::AFFORDANCE].copy_from_slice(&[a.x, a.y]);
    }
    for (i, p) in cot.gripper_path.iter().take(PATH_WAYPOINTS).enumerate() {
        v[layout::PATH.start + 2 * i] = p.x;
        v[layout::PATH.start + 2 * i + 1] = p.y;
    }
    if let Some(phase) = phase_of(cot) {
        v[layout::PHASE.start + phase as usize] = 1.0;
    }
    ReasoningMemory {
        vector: v,
        produced_at_slow_tick: slow_tick,
        cot: cot.clone(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    #[serde(default)]
    pub task: bool,
    #[serde(default)]
    pub vision: bool,
    #[serde(default)]
    pub robot: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        task: false,
        vision: false,
        robot: false,
    };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }

    /// Short label such as `-task,-vision`, or `full`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.task {
            parts.push("-task");
        }
        if self.vision {
            parts.push("-vision");
        }
        if self.robot {
            parts.push("-robot");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join(",")
        }
    }
}

pub fn ablate_cot(cot: &StructuredCot, drop: Ablation) -> StructuredCot {
    let mut c = cot.clone();
    if drop.task {
        c.subtasks = vec![c.task.clone()];
        c.current = c.task.clone();
    }
    if drop.vision {
        c.objects.clear();
        c.pick = None;
        c.affordance = None;
    }
    if drop.robot {
        c.gripper_path.clear();
    }
    c
}

/// Interface for the think step, so a learned model can replace the oracle.
pub trait Reasoner: Send + Sync {
    fn plan(
        &self,
        obs: &Observation,
        instruction: &str,
        priors: Option<&ActivePriors>,
        task_kind: TaskKind,
    ) -> Result<Plan, ReasonerError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OracleReasoner;

impl Reasoner for OracleReasoner {
    fn plan(
        &self,
        obs: &Observation,
        instruction: &str,
        priors: Option<&ActivePriors>,
        task_kind: TaskKind,
    ) -> Result<Plan, ReasonerError> {
        plan_cot(obs, instruction, priors, task_kind)
    }
}
