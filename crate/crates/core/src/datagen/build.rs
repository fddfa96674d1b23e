use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    extract_keyframes, perturb_annotation, project_motion, project_points, sample_interaction_mode, DatagenError,
    InteractionMode, MotionProjection, RecipeConfig, TickRecord, TrajectoryRecord,
};
use crate::codec::{augment_instruction, parse_cot, serialize_cot, snap_point, StructuredCot, COORD_SCALE, PATH_WAYPOINTS};
use crate::digest::digest_json;
use crate::flow::ActionChunk;
use crate::geometry::{ImageBox, ImagePoint};
use crate::guide::SpatialPrior;
use crate::reasoner::{object_ref, plan_cot};
use crate::sim::{
    check_success, expert_policy, mix_seed, observe, reset, step, PerturbationConfig, ScenarioRegistry, SceneState,
    TaskSpec,
};

/// Rolls out the scripted expert without noise until success or
/// `max_ticks`.
pub fn record_expert(
    registry: &ScenarioRegistry,
    scenario: &str,
    seed: u64,
    max_ticks: u64,
) -> Result<TrajectoryRecord, DatagenError> {
    let quiet = PerturbationConfig::none();
    let (mut state, task) = reset(registry, seed, scenario, &quiet)?;
    let start_aperture = state.gripper.aperture;
    let start_gripper = state.gripper.position;
    let mut ticks = Vec::new();
    for tick in 0..max_ticks {
        let action = expert_policy(&state, &task);
        let state_digest = digest_json(&state);
        state = step(&state, action, &quiet)?;
        ticks.push(TickRecord {
            tick,
            state_digest,
            action,
            aperture: state.gripper.aperture,
            gripper: state.gripper.position,
        });
        if check_success(&state, &task) {
            break;
        }
    }
    Ok(TrajectoryRecord {
        scenario: scenario.to_string(),
        seed,
        task,
        start_aperture,
        start_gripper,
        ticks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    /// Index of the source trajectory in the input list.
    pub trajectory: usize,
    pub scenario: String,
    pub seed: u64,
    pub tick: u64,
    pub obs_digest: String,
    /// Task text, followed by serialized prior fragments when `mode` is not
    /// `none`.
    pub instruction: String,
    pub cot: StructuredCot,
    pub cot_text: String,
    pub chunk: ActionChunk,
    pub mode: InteractionMode,
    /// RMS coordinate displacement between the embedded priors and the
    /// annotation they were drawn from.
    pub jitter_rms: Option<f64>,
    /// The motion window had no movement.
    pub degenerate_path: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub trajectory: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<AnnotatedSample>,
    pub skipped: Vec<Skipped>,
}

const BIN: f64 = 1.0 / COORD_SCALE as f64;

/// Snaps a prior to the codec grid and repairs shapes the grid collapses:
/// boxes thinner than one bin are widened by a bin, consecutive trace
/// points that land in the same bin are merged.
fn embeddable(prior: &SpatialPrior) -> Result<SpatialPrior, DatagenError> {
    let snap = |p: &ImagePoint| snap_point(&p.clamped());
    Ok(match prior {
        SpatialPrior::Point { point } => SpatialPrior::Point { point: snap(point)? },
        SpatialPrior::Box { bbox } => {
            let [lo, hi] = bbox.corners();
            let (lo, hi) = (snap(&lo)?, snap(&hi)?);
            let widen = |a: f64, b: f64| match () {
                _ if a < b => (a, b),
                _ if b + BIN < 1.0 => (a, b + BIN),
                _ => (a - BIN, b),
            };
            let (x0, x1) = widen(lo.x, hi.x);
            let (y0, y1) = widen(lo.y, hi.y);
            SpatialPrior::Box {
                bbox: ImageBox::new(x0, y0, x1, y1),
            }
        }
        SpatialPrior::Trace { points } => {
            let mut pts = points.iter().map(snap).collect::<Result<Vec<_>, _>>()?;
            pts.dedup();
            if pts.len() == 1 {
                pts.push(pts[0]);
            }
            SpatialPrior::Trace { points: pts }
        }
    })
}

fn coords(prior: &SpatialPrior) -> Vec<f64> {
    match prior {
        SpatialPrior::Point { point } => vec![point.x, point.y],
        SpatialPrior::Box { bbox } => vec![bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max],
        SpatialPrior::Trace { points } => points.iter().flat_map(|p| [p.x, p.y]).collect(),
    }
}

fn rms_displacement(annotation: &[SpatialPrior], embedded: &[SpatialPrior]) -> Option<f64> {
    let a: Vec<f64> = annotation.iter().flat_map(coords).collect();
    let b: Vec<f64> = embedded.iter().flat_map(coords).collect();
    // trace merging changes the length; no meaningful pairing then
    if a.is_empty() || a.len() != b.len() {
        return None;
    }
    let ss: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    Some((ss / a.len() as f64).sqrt())
}

/// Seed that depends on the trajectory's content, not its position in the
/// input, so sharding does not change what a trajectory produces.
fn content_seed(seed: u64, traj: &TrajectoryRecord) -> u64 {
    let head = traj
        .ticks
        .first()
        .and_then(|t| t.state_digest.get(..16))
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .unwrap_or(0);
    mix_seed(mix_seed(seed, traj.seed), head)
}

fn annotation_priors(
    mode: InteractionMode,
    target_box: ImageBox,
    task: &TaskSpec,
    motion: &MotionProjection,
) -> Vec<SpatialPrior> {
    match mode {
        InteractionMode::None => vec![],
        InteractionMode::PickBox => vec![SpatialPrior::bbox(target_box)],
        InteractionMode::PlaceBox => vec![SpatialPrior::bbox(task.goal_zone)],
        InteractionMode::PickAndPlace => vec![SpatialPrior::bbox(target_box), SpatialPrior::bbox(task.goal_zone)],
        InteractionMode::Affordance2d => vec![SpatialPrior::Point {
            point: motion.affordance,
        }],
        InteractionMode::GripperPath2d => vec![SpatialPrior::trace(motion.path.clone())],
    }
}

fn annotate(
    index: usize,
    traj: &TrajectoryRecord,
    registry: &ScenarioRegistry,
    recipe: &RecipeConfig,
    seed: u64,
    k: usize,
) -> Result<Vec<AnnotatedSample>, DatagenError> {
    traj.validate()?;
    let quiet = PerturbationConfig::none();
    let (mut state, task) = reset(registry, traj.seed, &traj.scenario, &quiet)?;
    if task != traj.task {
        return Err(DatagenError::ReplayDiverged(0));
    }
    let keyframes = extract_keyframes(traj);
    let positions = traj.positions();
    let base = content_seed(seed, traj);
    let n = traj.len() / k;
    let mut out = Vec::with_capacity(n);
    for (i, rec) in traj.ticks.iter().enumerate() {
        if digest_json(&state) != rec.state_digest {
            return Err(DatagenError::ReplayDiverged(rec.tick));
        }
        if i % k == 0 && i + k <= traj.len() {
            let motion = match keyframes.iter().find(|kf| kf.tick >= rec.tick) {
                Some(kf) => project_motion(traj, i..=kf.tick as usize + 1, PATH_WAYPOINTS)?,
                None => project_points(&[positions[i], positions[i]], PATH_WAYPOINTS)?,
            };
            let sample_seed = mix_seed(base, rec.tick);
            out.push(sample_at(index, traj, &state, &task, &motion, recipe, sample_seed, k)?);
        }
        state = step(&state, rec.action, &quiet)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sample_at(
    index: usize,
    traj: &TrajectoryRecord,
    state: &SceneState,
    task: &TaskSpec,
    motion: &MotionProjection,
    recipe: &RecipeConfig,
    seed: u64,
    k: usize,
) -> Result<AnnotatedSample, DatagenError> {
    let tick = state.tick;
    let obs = observe(state, &PerturbationConfig::none(), traj.seed);
    let plan = plan_cot(&obs, &task.instruction, None, task.task_kind)?;
    let view = obs
        .main_view
        .iter()
        .find(|v| v.object_id == task.target_id)
        .ok_or(DatagenError::TargetNotVisible(task.target_id))?;
    let cot = StructuredCot {
        pick: Some(object_ref(view)),
        affordance: Some(motion.affordance),
        gripper_path: motion.path.clone(),
        ..plan.cot
    }
    .snapped()?;
    let cot_text = serialize_cot(&cot)?;
    if parse_cot(&cot_text)? != cot {
        return Err(DatagenError::RoundTrip(tick));
    }

    let mode = sample_interaction_mode(recipe, seed);
    let annotation = annotation_priors(mode, view.bbox, task, motion);
    let embedded = annotation
        .iter()
        .enumerate()
        .map(|(j, a)| embeddable(&perturb_annotation(a, &recipe.jitter, mix_seed(seed, 1 + j as u64))))
        .collect::<Result<Vec<_>, _>>()?;
    let start = tick as usize;
    Ok(AnnotatedSample {
        trajectory: index,
        scenario: traj.scenario.clone(),
        seed: traj.seed,
        tick,
        obs_digest: digest_json(&obs),
        instruction: augment_instruction(&task.instruction, &embedded)?,
        cot,
        cot_text,
        chunk: ActionChunk {
            steps: traj.ticks[start..start + k].iter().map(|t| t.action).collect(),
        },
        mode,
        jitter_rms: rms_displacement(&annotation, &embedded),
        degenerate_path: motion.degenerate,
    })
}

/// Annotates every chunk-aligned tick of every trajectory. A trajectory
/// that fails to replay or annotate is skipped and reported.
pub fn build_dataset(
    registry: &ScenarioRegistry,
    trajectories: &[TrajectoryRecord],
    recipe: &RecipeConfig,
    seed: u64,
    k: usize,
) -> Result<Dataset, DatagenError> {
    recipe.validate()?;
    if trajectories.is_empty() {
        return Err(DatagenError::NoTrajectories);
    }
    if k == 0 {
        return Err(DatagenError::Recipe("chunk length must be at least 1".into()));
    }
    let results: Vec<Result<Vec<AnnotatedSample>, DatagenError>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| annotate(i, t, registry, recipe, seed, k))
        .collect();
    let mut out = Dataset::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(mut s) => out.samples.append(&mut s),
            Err(e) => {
                tracing::warn!(trajectory = i, error = %e, "skipping trajectory");
                out.skipped.push(Skipped {
                    trajectory: i,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// Per mode, in [`InteractionMode::ALL`] order.
    pub mode_counts: [usize; 6],
    pub expected: [f64; 6],
    /// Mean jitter RMS per mode, over samples where it is defined.
    pub mean_jitter_rms: [Option<f64>; 6],
    pub degenerate_paths: usize,
}

pub fn dataset_stats(samples: &[AnnotatedSample], recipe: &RecipeConfig) -> DatasetStats {
    let mut counts = [0usize; 6];
    let mut jitter = [(0.0, 0usize); 6];
    for s in samples {
        let i = InteractionMode::ALL.iter().position(|m| *m == s.mode).expect("mode listed");
        counts[i] += 1;
        if let Some(r) = s.jitter_rms {
            jitter[i].0 += r;
            jitter[i].1 += 1;
        }
    }
    DatasetStats {
        total: samples.len(),
        mode_counts: counts,
        expected: recipe.marginals(),
        mean_jitter_rms: jitter.map(|(s, n)| (n > 0).then(|| s / n as f64)),
        degenerate_paths: samples.iter().filter(|s| s.degenerate_path).count(),
    }
}

/// Long-format CSV: `metric,mode,value`.
pub fn write_stats_csv<W: Write>(stats: &DatasetStats, mut w: W) -> std::io::Result<()> {
    writeln!(w, "metric,mode,value")?;
    writeln!(w, "samples,all,{}", stats.total)?;
    writeln!(w, "degenerate_paths,all,{}", stats.degenerate_paths)?;
    for (i, m) in InteractionMode::ALL.iter().enumerate() {
        let n = stats.mode_counts[i];
        let frac = if stats.total > 0 { n as f64 / stats.total as f64 } else { 0.0 };
        writeln!(w, "count,{},{n}", m.name())?;
        writeln!(w, "fraction,{},{frac:.6}", m.name())?;
        writeln!(w, "expected,{},{:.6}", m.name(), stats.expected[i])?;
        if let Some(j) = stats.mean_jitter_rms[i] {
            writeln!(w, "mean_jitter_rms,{},{j:.6}", m.name())?;
        }
    }
    Ok(())
}

pub fn write_samples_jsonl<W: Write>(samples: &[AnnotatedSample], mut w: W) -> Result<(), DatagenError> {
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
