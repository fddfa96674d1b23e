//! Expert demonstrations for the action head.
//!
//! The demonstrator follows the reasoning memory instead of the privileged
//! task: it approaches whatever object the memory grounded, tracks the
//! memory's motion sketch, and holds still while the memory lags behind a
//! completed grasp. Labels therefore only depend on what the action head can
//! see.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    carrot_point, train, ActionChunk, FlowError, FlowSample, Optimizer, TrainConfig, TrainOutput, CARROT_LOOKAHEAD,
};
use crate::guide::{make_eval_trace, GuidanceEvent, GuidanceSource, SpatialPrior};
use crate::reasoner::{phase_of, OracleReasoner, Phase, ReasoningMemory};
use crate::runtime::{
    ActionContext, ActionSource, Episode, GuidanceFeed, RuntimeConfig, RuntimeError,
};
use crate::sim::expert::{move_toward, CLOSE_RADIUS, HOLD_RADIUS, OPEN_RADIUS};
use crate::sim::{
    mix_seed, step, Action, Observation, PerturbationConfig, RobotStateShift, ScenarioRegistry, SceneState,
    TaskKind, TaskSpec,
};

/// Object the memory's affordance points at, falling back to the task target.
fn intended_object(state: &SceneState, task: &TaskSpec, memory: &ReasoningMemory) -> u32 {
    let Some(a) = memory.cot.affordance else {
        return task.target_id;
    };
    state
        .objects
        .iter()
        .filter(|o| Some(o.id) != task.destination_id && Some(o.id) != task.obstacle_id)
        .min_by(|x, y| x.position.distance(&a).total_cmp(&y.position.distance(&a)))
        .map_or(task.target_id, |o| o.id)
}

/// One step of the memory-following demonstrator.
pub fn memory_expert(state: &SceneState, task: &TaskSpec, memory: &ReasoningMemory, intended: u32) -> Action {
    let g = &state.gripper;
    let pos = g.position;
    let path = &memory.cot.gripper_path;
    match g.held_object {
        Some(id) if id != intended => [0.0, 0.0, 1.0],
        Some(_) => {
            if task.task_kind != TaskKind::PickAndPlace {
                return [0.0, 0.0, -1.0];
            }
            // the memory still describes the grasp; wait for the replan
            if matches!(phase_of(&memory.cot), Some(Phase::Approach | Phase::Grasp)) {
                return [0.0, 0.0, -1.0];
            }
            let goal = path.last().copied().unwrap_or_else(|| task.goal_zone.center());
            let [dx, dy] = move_toward(&pos, &goal);
            let grip = if pos.distance(&goal) <= OPEN_RADIUS { 1.0 } else { -1.0 };
            [dx, dy, grip]
        }
        None => {
            if g.aperture < 0.5 {
                return [0.0, 0.0, 1.0];
            }
            let Some(obj) = state.object(intended) else {
                return [0.0, 0.0, 1.0];
            };
            let dist = pos.distance(&obj.position);
            let closing = g.aperture < 1.0 && dist <= HOLD_RADIUS;
            let grip = if closing || dist <= CLOSE_RADIUS { -1.0 } else { 1.0 };
            let goal = match carrot_point(path, pos) {
                Some(c) if dist > CARROT_LOOKAHEAD => c,
                _ => obj.position,
            };
            let [dx, dy] = move_toward(&pos, &goal);
            [dx, dy, grip]
        }
    }
}

/// Noise-free rollout of [`memory_expert`] from the current state.
pub fn expert_chunk(state: &SceneState, task: &TaskSpec, memory: &ReasoningMemory, k: usize) -> ActionChunk {
    let intended = intended_object(state, task, memory);
    let quiet = PerturbationConfig::none();
    let mut s = state.clone();
    let mut steps = Vec::with_capacity(k);
    for _ in 0..k {
        let a = memory_expert(&s, task, memory, intended);
        steps.push(a);
        s = step(&s, a, &quiet).expect("expert actions are finite");
    }
    ActionChunk { steps }
}

/// Scripted action source backed by [`expert_chunk`].
#[derive(Clone, Copy, Debug)]
pub struct MemoryExpert {
    pub k: usize,
}

impl ActionSource for MemoryExpert {
    fn chunk(&self, ctx: &ActionContext<'_>) -> Result<ActionChunk, FlowError> {
        Ok(expert_chunk(ctx.state, ctx.task, ctx.memory, self.k))
    }
}

/// Wraps a source and keeps every (conditioning, chunk) pair it produced.
pub struct Recorder<S> {
    pub inner: S,
    pub samples: Mutex<Vec<FlowSample>>,
}

impl<S: ActionSource> ActionSource for Recorder<S> {
    fn chunk(&self, ctx: &ActionContext<'_>) -> Result<ActionChunk, FlowError> {
        let c = self.inner.chunk(ctx)?;
        self.samples.lock().expect("recorder poisoned").push(FlowSample {
            chunk: c.flatten(),
            cond: ctx.cond.0.clone(),
        });
        Ok(c)
    }
}

/// Prior that a perfect operator would give for this scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePrior {
    Point,
    Box,
    Trace,
}

/// Builds the oracle prior from simulator state: the target's true grasp
/// point, its true extent, or a straight trace from the gripper to it.
pub fn oracle_prior(kind: OraclePrior, task: &TaskSpec, obs: &Observation) -> Option<SpatialPrior> {
    let view = obs.main_view.iter().find(|v| v.object_id == task.target_id)?;
    Some(match kind {
        OraclePrior::Point => {
            let c = view.bbox.center();
            SpatialPrior::point(c.x, c.y)
        }
        OraclePrior::Box => SpatialPrior::bbox(view.bbox),
        OraclePrior::Trace => make_eval_trace(obs.gripper_image, &view.bbox, crate::codec::PATH_WAYPOINTS).ok()?,
    })
}

/// Up-front oracle guidance.
#[derive(Clone, Copy, Debug)]
pub struct OracleGuidance(pub Option<OraclePrior>);

impl GuidanceFeed for OracleGuidance {
    fn up_front(&mut self, obs: &Observation, _: &SceneState, task: &TaskSpec) -> Vec<GuidanceEvent> {
        self.0
            .and_then(|k| oracle_prior(k, task, obs))
            .map(|p| vec![GuidanceEvent::up_front(p, GuidanceSource::Oracle)])
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    /// Scenario ids, cycled over episodes.
    pub scenarios: Vec<String>,
    pub episodes: usize,
    pub seed: u64,
    /// Actuation noise injected while collecting, so the data covers
    /// recoveries from off-nominal states.
    pub actuation_noise: f64,
    /// Chance that an episode gets an up-front oracle prior.
    pub prior_probability: f64,
    pub runtime: RuntimeConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["single_target".into()],
            episodes: 500,
            seed: 0,
            actuation_noise: 0.01,
            prior_probability: 0.5,
            runtime: RuntimeConfig {
                chunk_stride: Some(1),
                max_fast_ticks: 80,
                ..RuntimeConfig::default()
            },
        }
    }
}

/// Episode seed used for demonstration `i`; kept disjoint from small
/// evaluation seeds.
pub fn demo_seed(base: u64, i: usize) -> u64 {
    mix_seed(base ^ 0xdead_0000_0000, i as u64)
}

fn prior_for(scenario: &str, rng: &mut ChaCha8Rng, p: f64) -> Option<OraclePrior> {
    if rng.random::<f64>() >= p {
        return None;
    }
    if scenario == "obstacle" {
        return Some(OraclePrior::Trace);
    }
    Some(if rng.random::<bool>() { OraclePrior::Point } else { OraclePrior::Box })
}

/// Runs demonstration episodes and returns every recorded sample, in
/// episode order.
pub fn collect_demos(registry: &ScenarioRegistry, config: &DemoConfig) -> Result<Vec<FlowSample>, RuntimeError> {
    let perturbation = PerturbationConfig {
        robot_state: Some(RobotStateShift {
            init_radius: 0.0,
            actuation_noise: config.actuation_noise,
        }),
        ..Default::default()
    };
    let k = config.runtime.chunk_length;
    let per_episode: Vec<Vec<FlowSample>> = (0..config.episodes)
        .into_par_iter()
        .map(|i| {
            let scenario = &config.scenarios[i % config.scenarios.len()];
            let seed = demo_seed(config.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9a1d));
            let recorder = Arc::new(Recorder {
                inner: MemoryExpert { k },
                samples: Mutex::new(Vec::new()),
            });
            let mut ep = Episode::new(
                registry,
                scenario,
                &perturbation,
                Arc::new(OracleReasoner),
                recorder.clone(),
                config.runtime.clone(),
                seed,
            )?;
            ep.run(&mut OracleGuidance(prior_for(scenario, &mut rng, config.prior_probability)))?;
            drop(ep);
            let samples = std::mem::take(&mut *recorder.samples.lock().expect("recorder poisoned"));
            Ok(samples)
        })
        .collect::<Result<_, RuntimeError>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

/// Demonstration and training settings for a learned action head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecipe {
    pub demos: DemoConfig,
    pub train: TrainConfig,
}

impl PolicyRecipe {
    /// 500 single-target episodes.
    pub fn single_target() -> Self {
        Self {
            demos: DemoConfig::default(),
            train: TrainConfig {
                steps: 4000,
                learning_rate: 2e-3,
                seed: 1,
                optimizer: Optimizer::adam(),
                cosine_decay: true,
                ..TrainConfig::default()
            },
        }
    }

    /// Single-target, both distractor suites and the obstacle suite.
    pub fn multi_scenario() -> Self {
        Self {
            demos: DemoConfig {
                scenarios: ["single_target", "color_distractor", "position_distractor", "obstacle"]
                    .map(String::from)
                    .to_vec(),
                episodes: 1200,
                ..DemoConfig::default()
            },
            train: TrainConfig {
                steps: 4000,
                learning_rate: 3e-3,
                seed: 1,
                optimizer: Optimizer::adam(),
                cosine_decay: true,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("collecting demonstrations: {0}")]
    Demos(#[from] RuntimeError),
    #[error("training: {0}")]
    Train(#[from] FlowError),
}

/// Collects demonstrations and trains a head on them.
pub fn train_policy(registry: &ScenarioRegistry, recipe: &PolicyRecipe) -> Result<(TrainOutput, usize), PolicyError> {
    let samples = collect_demos(registry, &recipe.demos)?;
    let out = train(&samples, recipe.demos.runtime.chunk_length, &recipe.train)?;
    Ok((out, samples.len()))
}
