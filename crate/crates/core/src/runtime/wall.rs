use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use crossbeam_channel::Receiver;
use serde::{Deserialize, Serialize};

use super::trace::{EpisodeTrace, FastRecord, GuidanceRecord, SlowRecord, TraceLine};
use super::{ActionContext, ActionSource, GuidanceAck, MemorySnapshot, RuntimeConfig, RuntimeError};
use crate::codec::serialize_cot;
use crate::digest::digest_json;
use crate::flow::featurize;
use crate::guide::GuidanceEvent;
use crate::reasoner::{ablate_cot, encode_memory, ActivePriors, Reasoner};
use crate::sim::{
    check_success, mix_seed, observe, obstacle_contact, reset, step, Observation, PerturbationConfig,
    ScenarioRegistry, TaskSpec,
};

/// Measured loop periods of a wall-clock run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WallStats {
    pub fast_periods_ms: Vec<f64>,
    pub slow_periods_ms: Vec<f64>,
    /// Fast ticks that saw a snapshot whose canaries disagreed.
    pub torn_reads: u64,
}

struct Slow {
    reasoner: Arc<dyn Reasoner>,
    task: TaskSpec,
    ablation: crate::reasoner::Ablation,
    priors: ActivePriors,
    seq: u64,
}

impl Slow {
    fn plan(
        &mut self,
        obs: &Observation,
        at: u64,
        applied: Vec<GuidanceEvent>,
    ) -> Result<(MemorySnapshot, Vec<TraceLine>), RuntimeError> {
        let mut lines = Vec::new();
        for e in &applied {
            self.priors.apply(&e.prior);
            lines.push(TraceLine::Guidance(GuidanceRecord {
                event: e.clone(),
                ack: GuidanceAck {
                    issued_at: e.issued_at,
                    effective_tick: at,
                },
            }));
        }
        let priors = (!self.priors.is_empty()).then_some(&self.priors);
        let plan = self
            .reasoner
            .plan(obs, &self.task.instruction, priors, self.task.task_kind)
            .map_err(|e| RuntimeError::Reasoner { tick: at, source: e })?;
        let cot = ablate_cot(&plan.cot, self.ablation);
        self.seq += 1;
        lines.push(TraceLine::Slow(SlowRecord {
            tick: at,
            cot: serialize_cot(&cot).unwrap_or_else(|e| format!("<unserializable: {e}>")),
            guidance_applied: applied,
            grounded_object: obs.main_view.get(plan.grounding.index).map(|v| v.object_id),
            rule: plan.grounding.rule_used,
            warnings: plan.warnings,
        }));
        Ok((MemorySnapshot::new(encode_memory(&cot, at), at, self.seq), lines))
    }
}

/// Runs the slow loop on its own thread against a real clock. Not
/// deterministic; staleness depends on how long planning takes.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_wall(
    registry: &ScenarioRegistry,
    scenario: &str,
    perturbation: &PerturbationConfig,
    reasoner: Arc<dyn Reasoner>,
    actions: Arc<dyn ActionSource>,
    config: &RuntimeConfig,
    guidance: Receiver<GuidanceEvent>,
    seed: u64,
) -> Result<(EpisodeTrace, WallStats), RuntimeError> {
    config.validate()?;
    let (mut state, task) = reset(registry, seed, scenario, perturbation).map_err(|e| RuntimeError::Sim {
        tick: 0,
        source: e,
    })?;
    let tick = Duration::from_millis(config.tick_ms);
    let mut slow = Slow {
        reasoner,
        task: task.clone(),
        ablation: config.ablation,
        priors: ActivePriors::default(),
        seq: 0,
    };
    let obs0 = observe(&state, perturbation, seed);
    let (snap, mut slow_lines) = slow.plan(&obs0, 0, guidance.try_iter().collect())?;
    let cache = ArcSwap::from_pointee(snap);
    let latest_obs = ArcSwap::from_pointee(obs0);
    let fast_tick = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let mut stats = WallStats::default();
    let mut fast_lines = Vec::new();
    let (mut success, mut contact, mut sim_steps) = (false, false, 0u64);

    let slow_result = std::thread::scope(|scope| {
        let slow_thread = scope.spawn(|| -> Result<(Vec<TraceLine>, Vec<f64>), RuntimeError> {
            let mut lines = Vec::new();
            let mut periods = Vec::new();
            let mut last = Instant::now();
            let period = tick * config.slow_period as u32;
            while !stop.load(Ordering::Acquire) {
                std::thread::sleep(period.saturating_sub(last.elapsed()));
                if stop.load(Ordering::Acquire) {
                    break;
                }
                periods.push(last.elapsed().as_secs_f64() * 1e3);
                last = Instant::now();
                let at = fast_tick.load(Ordering::Acquire);
                let obs = latest_obs.load_full();
                let (snap, mut l) = slow.plan(&obs, at, guidance.try_iter().collect())?;
                cache.store(Arc::new(snap));
                lines.append(&mut l);
            }
            Ok((lines, periods))
        });

        let mut fast = || -> Result<(), RuntimeError> {
            let mut last = Instant::now();
            for t in 0..config.max_fast_ticks {
                let obs = observe(&state, perturbation, seed);
                latest_obs.store(Arc::new(obs.clone()));
                fast_tick.store(t, Ordering::Release);
                let snap = cache.load_full();
                if snap.head != snap.tail {
                    stats.torn_reads += 1;
                }
                let cond = featurize(&obs, &snap.memory);
                let ctx = ActionContext {
                    obs: &obs,
                    cond: &cond,
                    memory: &snap.memory,
                    state: &state,
                    task: &task,
                    seed: mix_seed(seed, t),
                };
                let chunk = actions.chunk(&ctx).map_err(|e| RuntimeError::Flow { tick: t, source: e })?;
                let mut executed = Vec::new();
                for &a in chunk.steps.iter().take(config.stride()) {
                    state = step(&state, a, perturbation).map_err(|e| RuntimeError::Sim { tick: t, source: e })?;
                    executed.push(a);
                    sim_steps += 1;
                    contact |= obstacle_contact(&state, &task);
                    if check_success(&state, &task) {
                        success = true;
                        break;
                    }
                }
                fast_lines.push(TraceLine::Fast(FastRecord {
                    tick: t,
                    obs_digest: digest_json(&obs),
                    memory_tick: snap.updated_at,
                    staleness: t.saturating_sub(snap.updated_at),
                    actions: executed,
                }));
                if success {
                    break;
                }
                std::thread::sleep(tick.saturating_sub(last.elapsed()));
                stats.fast_periods_ms.push(last.elapsed().as_secs_f64() * 1e3);
                last = Instant::now();
            }
            Ok(())
        };
        let fast_result = fast();
        stop.store(true, Ordering::Release);
        let slow_result = slow_thread.join().expect("slow loop panicked");
        fast_result.map(|_| slow_result)
    })??;

    let (mut lines, periods) = slow_result;
    stats.slow_periods_ms = periods;
    slow_lines.append(&mut lines);
    // merge by tick, slow records ahead of the fast record of the same tick
    let key = |l: &TraceLine| match l {
        TraceLine::Slow(r) => (r.tick, 1),
        TraceLine::Guidance(r) => (r.ack.effective_tick, 0),
        TraceLine::Fast(r) => (r.tick, 2),
    };
    let mut all: Vec<TraceLine> = slow_lines.into_iter().chain(fast_lines).collect();
    all.sort_by_key(key);
    let trace = EpisodeTrace {
        scenario: scenario.to_string(),
        seed,
        instruction: task.instruction.clone(),
        target_id: task.target_id,
        config: config.clone(),
        perturbation: *perturbation,
        lines: all,
        success,
        obstacle_contact: contact,
        sim_steps,
    };
    Ok((trace, stats))
}
