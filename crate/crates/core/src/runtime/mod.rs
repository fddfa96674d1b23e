//! Slow/fast executor. The slow loop re-plans with the reasoner and swaps a
//! cached memory; the fast loop featurizes against whatever memory is cached
//! and executes action chunks.

mod episode;
mod trace;
mod wall;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{sample_chunk, ActionChunk, ConditioningVector, FlowError, FlowModel, DEFAULT_EULER_STEPS};
use crate::guide::{GuidanceEvent, GuidanceTiming, PriorError};
use crate::reasoner::{Ablation, ReasonerError, ReasoningMemory};
use crate::sim::{Observation, SceneState, SimError, TaskSpec};

pub use episode::{run_episode, Episode, TickOutcome};
pub use trace::{staleness_report, EpisodeTrace, FastRecord, GuidanceRecord, SlowRecord, StalenessReport, TraceLine};
pub use wall::{run_episode_wall, WallStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Simulated,
    Wall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    /// Fast ticks per slow tick.
    pub slow_period: u64,
    pub chunk_length: usize,
    /// Actions executed per fast tick; `None` executes the whole chunk.
    pub chunk_stride: Option<usize>,
    pub max_fast_ticks: u64,
    pub clock_mode: ClockMode,
    /// Fast tick duration in wall-clock mode.
    pub tick_ms: u64,
    /// CoT fields withheld from the action head.
    pub ablation: Ablation,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            slow_period: 5,
            chunk_length: crate::flow::DEFAULT_CHUNK_LEN,
            chunk_stride: None,
            max_fast_ticks: 60,
            clock_mode: ClockMode::Simulated,
            tick_ms: 10,
            ablation: Ablation::NONE,
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: &str| Err(RuntimeError::Config(m.to_string()));
        if self.slow_period == 0 {
            return bad("slow_period must be at least 1");
        }
        if self.max_fast_ticks == 0 {
            return bad("max_fast_ticks must be at least 1");
        }
        if self.chunk_length == 0 {
            return bad("chunk_length must be at least 1");
        }
        match self.chunk_stride {
            Some(0) => bad("chunk_stride must be at least 1"),
            Some(s) if s > self.chunk_length => bad("chunk_stride exceeds chunk_length"),
            _ => Ok(()),
        }
    }

    pub fn stride(&self) -> usize {
        self.chunk_stride.unwrap_or(self.chunk_length)
    }

    /// First slow boundary at or after `tick`.
    pub fn next_boundary(&self, tick: u64) -> u64 {
        tick.div_ceil(self.slow_period) * self.slow_period
    }

    /// Tick at which an event issued during fast tick `t` first shapes a CoT.
    pub fn effective_tick(&self, issued_at: u64) -> u64 {
        self.next_boundary(issued_at + 1)
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid runtime config: {0}")]
    Config(String),
    #[error("fast tick {tick}: {source}")]
    Sim { tick: u64, source: SimError },
    #[error("fast tick {tick}: {source}")]
    Reasoner { tick: u64, source: ReasonerError },
    #[error("fast tick {tick}: {source}")]
    Flow { tick: u64, source: FlowError },
    #[error("episode already terminated")]
    StaleEpisode,
    #[error("up-front guidance must arrive before the first tick")]
    UpFrontAfterStart,
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Receipt for an injected prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceAck {
    pub issued_at: u64,
    pub effective_tick: u64,
}

/// Immutable value swapped into the cache by the slow loop. `head` and
/// `tail` are written first and last; a reader seeing them differ has
/// observed a torn value.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorySnapshot {
    pub head: u64,
    pub memory: ReasoningMemory,
    pub updated_at: u64,
    pub tail: u64,
}

impl MemorySnapshot {
    pub fn new(memory: ReasoningMemory, updated_at: u64, seq: u64) -> Self {
        Self {
            head: seq,
            memory,
            updated_at,
            tail: seq,
        }
    }
}

/// Everything an action source may look at. `state` and `task` are
/// privileged and only used by scripted experts.
pub struct ActionContext<'a> {
    pub obs: &'a Observation,
    pub cond: &'a ConditioningVector,
    pub memory: &'a ReasoningMemory,
    pub state: &'a SceneState,
    pub task: &'a TaskSpec,
    pub seed: u64,
}

pub trait ActionSource: Send + Sync {
    fn chunk(&self, ctx: &ActionContext<'_>) -> Result<ActionChunk, FlowError>;
}

/// The learned action head.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPolicy {
    pub model: Arc<FlowModel>,
    pub euler_steps: usize,
}

impl FlowPolicy {
    pub fn new(model: FlowModel) -> Self {
        Self {
            model: Arc::new(model),
            euler_steps: DEFAULT_EULER_STEPS,
        }
    }
}

impl ActionSource for FlowPolicy {
    fn chunk(&self, ctx: &ActionContext<'_>) -> Result<ActionChunk, FlowError> {
        sample_chunk(self.model.as_ref(), &ctx.cond.0, self.euler_steps, ctx.seed)
    }
}

/// Supplies guidance to a running episode.
pub trait GuidanceFeed {
    /// Events applied before the first slow tick.
    fn up_front(&mut self, _obs: &Observation, _state: &SceneState, _task: &TaskSpec) -> Vec<GuidanceEvent> {
        Vec::new()
    }

    /// Events arriving during fast tick `tick`, after that tick's slow phase.
    fn poll(&mut self, _tick: u64, _obs: &Observation) -> Vec<GuidanceEvent> {
        Vec::new()
    }
}

pub struct NoGuidance;

impl GuidanceFeed for NoGuidance {}

/// Fixed schedule: up-front events first, mid-episode events at their
/// `issued_at` tick.
#[derive(Clone, Debug, Default)]
pub struct ScriptedGuidance(pub Vec<GuidanceEvent>);

impl GuidanceFeed for ScriptedGuidance {
    fn up_front(&mut self, _: &Observation, _: &SceneState, _: &TaskSpec) -> Vec<GuidanceEvent> {
        self.0
            .iter()
            .filter(|e| e.timing == GuidanceTiming::UpFront)
            .cloned()
            .collect()
    }

    fn poll(&mut self, tick: u64, _: &Observation) -> Vec<GuidanceEvent> {
        self.0
            .iter()
            .filter(|e| e.timing == GuidanceTiming::MidEpisode && e.issued_at == tick)
            .cloned()
            .collect()
    }
}
