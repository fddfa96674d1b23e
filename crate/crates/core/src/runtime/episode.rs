use std::sync::Arc;

use arc_swap::ArcSwap;

use super::trace::{EpisodeTrace, FastRecord, GuidanceRecord, SlowRecord, TraceLine};
use super::{
    ActionContext, ActionSource, GuidanceAck, GuidanceFeed, MemorySnapshot, RuntimeConfig, RuntimeError,
};
use crate::codec::serialize_cot;
use crate::digest::digest_json;
use crate::flow::featurize;
use crate::guide::{GuidanceEvent, GuidanceTiming};
use crate::reasoner::{ablate_cot, encode_memory, ActivePriors, Reasoner};
use crate::sim::{
    check_success, mix_seed, observe, obstacle_contact, reset, step, Observation, PerturbationConfig,
    ScenarioRegistry, SceneState, TaskSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TickOutcome {
    pub tick: u64,
    pub success: bool,
    pub done: bool,
}

/// A simulated-clock episode that can be advanced one fast tick at a time.
pub struct Episode {
    config: RuntimeConfig,
    reasoner: Arc<dyn Reasoner>,
    actions: Arc<dyn ActionSource>,
    perturbation: PerturbationConfig,
    state: SceneState,
    task: TaskSpec,
    seed: u64,
    cache: Option<Arc<ArcSwap<MemorySnapshot>>>,
    queue: Vec<GuidanceEvent>,
    priors: ActivePriors,
    next_tick: u64,
    slow_count: u64,
    done: bool,
    success: bool,
    trace: EpisodeTrace,
}

impl Episode {
    pub fn new(
        registry: &ScenarioRegistry,
        scenario: &str,
        perturbation: &PerturbationConfig,
        reasoner: Arc<dyn Reasoner>,
        actions: Arc<dyn ActionSource>,
        config: RuntimeConfig,
        seed: u64,
    ) -> Result<Self, RuntimeError> {
        config.validate()?;
        let (state, task) = reset(registry, seed, scenario, perturbation).map_err(|e| RuntimeError::Sim {
            tick: 0,
            source: e,
        })?;
        let trace = EpisodeTrace {
            scenario: scenario.to_string(),
            seed,
            instruction: task.instruction.clone(),
            target_id: task.target_id,
            config: config.clone(),
            perturbation: *perturbation,
            lines: Vec::new(),
            success: false,
            obstacle_contact: false,
            sim_steps: 0,
        };
        Ok(Self {
            config,
            reasoner,
            actions,
            perturbation: *perturbation,
            state,
            task,
            seed,
            cache: None,
            queue: Vec::new(),
            priors: ActivePriors::default(),
            next_tick: 0,
            slow_count: 0,
            done: false,
            success: false,
            trace,
        })
    }

    pub fn state(&self) -> &SceneState {
        &self.state
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    /// Current observation, as the next tick will see it.
    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.perturbation, self.seed)
    }

    /// Reader handle on the cached memory (absent before the first slow tick).
    pub fn memory(&self) -> Option<Arc<MemorySnapshot>> {
        self.cache.as_ref().map(|c| c.load_full())
    }

    fn enqueue(&mut self, mut event: GuidanceEvent, issued_at: u64, from: u64) -> Result<GuidanceAck, RuntimeError> {
        if self.done {
            return Err(RuntimeError::StaleEpisode);
        }
        if event.timing == GuidanceTiming::MidEpisode {
            event.issued_at = issued_at;
        } else if self.next_tick > 0 {
            return Err(RuntimeError::UpFrontAfterStart);
        }
        event.validate()?;
        let ack = GuidanceAck {
            issued_at: event.issued_at,
            effective_tick: self.config.next_boundary(from),
        };
        self.trace.lines.push(TraceLine::Guidance(GuidanceRecord {
            event: event.clone(),
            ack,
        }));
        self.queue.push(event);
        Ok(ack)
    }

    /// Queues a prior between ticks; it shapes the next slow tick.
    pub fn inject(&mut self, event: GuidanceEvent) -> Result<GuidanceAck, RuntimeError> {
        let issued = self.next_tick.saturating_sub(1);
        self.enqueue(event, issued, self.next_tick)
    }

    fn slow_tick(&mut self, t: u64, obs: &Observation) -> Result<(), RuntimeError> {
        let applied: Vec<GuidanceEvent> = std::mem::take(&mut self.queue);
        for e in &applied {
            self.priors.apply(&e.prior);
        }
        let priors = (!self.priors.is_empty()).then_some(&self.priors);
        let plan = self
            .reasoner
            .plan(obs, &self.task.instruction, priors, self.task.task_kind)
            .map_err(|e| RuntimeError::Reasoner { tick: t, source: e })?;
        let cot = ablate_cot(&plan.cot, self.config.ablation);
        let text = serialize_cot(&cot).unwrap_or_else(|e| format!("<unserializable: {e}>"));
        self.slow_count += 1;
        let snap = MemorySnapshot::new(encode_memory(&cot, t), t, self.slow_count);
        match &self.cache {
            Some(c) => c.store(Arc::new(snap)),
            None => self.cache = Some(Arc::new(ArcSwap::from_pointee(snap))),
        }
        self.trace.lines.push(TraceLine::Slow(SlowRecord {
            tick: t,
            cot: text,
            guidance_applied: applied,
            grounded_object: obs.main_view.get(plan.grounding.index).map(|v| v.object_id),
            rule: plan.grounding.rule_used,
            warnings: plan.warnings,
        }));
        Ok(())
    }

    /// Runs one fast tick (preceded by a slow tick on schedule boundaries).
    pub fn tick(&mut self, feed: &mut dyn GuidanceFeed) -> Result<TickOutcome, RuntimeError> {
        if self.done {
            return Err(RuntimeError::StaleEpisode);
        }
        let t = self.next_tick;
        let obs = self.observe();
        if t == 0 {
            for e in feed.up_front(&obs, &self.state, &self.task) {
                self.enqueue(e, 0, 0)?;
            }
        }
        if t.is_multiple_of(self.config.slow_period) {
            self.slow_tick(t, &obs)?;
        }
        for e in feed.poll(t, &obs) {
            self.enqueue(e, t, t + 1)?;
        }

        let snap = self.memory().expect("slow tick 0 fills the cache");
        debug_assert_eq!(snap.head, snap.tail);
        let cond = featurize(&obs, &snap.memory);
        let ctx = ActionContext {
            obs: &obs,
            cond: &cond,
            memory: &snap.memory,
            state: &self.state,
            task: &self.task,
            seed: mix_seed(self.seed, t),
        };
        let chunk = self
            .actions
            .chunk(&ctx)
            .map_err(|e| RuntimeError::Flow { tick: t, source: e })?;
        let mut executed = Vec::new();
        for &a in chunk.steps.iter().take(self.config.stride()) {
            self.state = step(&self.state, a, &self.perturbation).map_err(|e| RuntimeError::Sim {
                tick: t,
                source: e,
            })?;
            executed.push(a);
            self.trace.sim_steps += 1;
            self.trace.obstacle_contact |= obstacle_contact(&self.state, &self.task);
            if check_success(&self.state, &self.task) {
                self.success = true;
                break;
            }
        }
        self.trace.lines.push(TraceLine::Fast(FastRecord {
            tick: t,
            obs_digest: digest_json(&obs),
            memory_tick: snap.updated_at,
            staleness: t - snap.updated_at,
            actions: executed,
        }));
        self.next_tick += 1;
        if self.success || self.next_tick >= self.config.max_fast_ticks {
            self.done = true;
            self.trace.success = self.success;
        }
        Ok(TickOutcome {
            tick: t,
            success: self.success,
            done: self.done,
        })
    }

    /// Runs to termination.
    pub fn run(&mut self, feed: &mut dyn GuidanceFeed) -> Result<(), RuntimeError> {
        while !self.done {
            self.tick(feed)?;
        }
        Ok(())
    }

    pub fn finish(self) -> EpisodeTrace {
        self.trace
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    registry: &ScenarioRegistry,
    scenario: &str,
    perturbation: &PerturbationConfig,
    reasoner: Arc<dyn Reasoner>,
    actions: Arc<dyn ActionSource>,
    config: &RuntimeConfig,
    feed: &mut dyn GuidanceFeed,
    seed: u64,
) -> Result<EpisodeTrace, RuntimeError> {
    let mut ep = Episode::new(registry, scenario, perturbation, reasoner, actions, config.clone(), seed)?;
    ep.run(feed)?;
    Ok(ep.finish())
}
