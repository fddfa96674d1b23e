//! Sessions: one runtime episode each, driven on its own thread.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use gta_core::codec::parse_cot;
use gta_core::digest::{digest_bytes, digest_json};
use gta_core::flow::{ActionChunk, FlowError};
use gta_core::guide::{GuidanceEvent, GuidanceTiming};
use gta_core::reasoner::{OracleReasoner, Reasoner};
use gta_core::runtime::{
    ActionContext, ActionSource, ClockMode, Episode, NoGuidance, RuntimeConfig, RuntimeError, TraceLine,
};
use gta_core::sim::{PerturbationConfig, ScenarioRegistry};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{oneshot, watch};

use crate::buffer::StreamBuffer;
use crate::wire::{EpisodeOutcome, ErrorClass, WireMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Stale(String),
    #[error("no session {0}")]
    NotFound(String),
    #[error("capacity of {0} live sessions reached")]
    Capacity(usize),
    #[error("{0}")]
    NotReady(String),
    #[error("{0}")]
    Internal(String),
}

impl GatewayError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GatewayError::BadRequest(_) => ErrorClass::BadRequest,
            GatewayError::Validation(_) => ErrorClass::Validation,
            GatewayError::Stale(_) => ErrorClass::Stale,
            GatewayError::NotFound(_) => ErrorClass::NotFound,
            GatewayError::Capacity(_) => ErrorClass::Capacity,
            GatewayError::NotReady(_) => ErrorClass::NotReady,
            GatewayError::Internal(_) => ErrorClass::Internal,
        }
    }

    pub fn to_wire(&self) -> WireMessage {
        WireMessage::error(self.class(), self.to_string())
    }
}

fn from_runtime(e: RuntimeError) -> GatewayError {
    match e {
        RuntimeError::StaleEpisode => GatewayError::Stale(e.to_string()),
        RuntimeError::Prior(_) | RuntimeError::UpFrontAfterStart => GatewayError::Validation(e.to_string()),
        other => GatewayError::Internal(other.to_string()),
    }
}

fn stale() -> GatewayError {
    GatewayError::Stale("session has terminated".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    Pending,
    Running,
    Done {
        outcome: EpisodeOutcome,
        /// Wall time from start to termination.
        elapsed_ms: f64,
    },
    Failed {
        detail: String,
    },
}

impl SessionState {
    pub fn is_live(&self) -> bool {
        matches!(self, SessionState::Pending | SessionState::Running)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub id: String,
    pub scenario: String,
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub runtime: RuntimeConfig,
    #[serde(flatten)]
    pub state: SessionState,
}

/// Body of `POST /sessions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub runtime: Option<RuntimeConfig>,
    /// Overrides the server's default clock.
    #[serde(default)]
    pub clock_mode: Option<ClockMode>,
    /// Start at once instead of waiting for a `start` message.
    #[serde(default)]
    pub autostart: bool,
}

impl CreateSession {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            seed: 0,
            perturbation: PerturbationConfig::none(),
            runtime: None,
            clock_mode: None,
            autostart: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Live (pending or running) sessions allowed at once.
    pub capacity: usize,
    pub clock_mode: ClockMode,
    /// Per-client stream buffer, in messages.
    pub stream_buffer: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            capacity: 8,
            clock_mode: ClockMode::Simulated,
            stream_buffer: 1024,
        }
    }
}

/// Wraps the policy to remember the digest of the chunk it last produced.
struct Recorder {
    inner: Arc<dyn ActionSource>,
    last: Mutex<String>,
}

impl ActionSource for Recorder {
    fn chunk(&self, ctx: &ActionContext<'_>) -> Result<ActionChunk, FlowError> {
        let chunk = self.inner.chunk(ctx)?;
        *lock(&self.last) = digest_json(&chunk);
        Ok(chunk)
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

enum Command {
    Start(oneshot::Sender<Result<(), GatewayError>>),
    Guidance(GuidanceEvent, oneshot::Sender<Result<(), GatewayError>>),
}

/// State shared between a session handle and its driver thread.
struct Shared {
    id: String,
    state: watch::Sender<SessionState>,
    subscribers: Mutex<Vec<Arc<StreamBuffer>>>,
    trace: Mutex<Option<String>>,
    last: Mutex<Option<WireMessage>>,
}

impl Shared {
    fn broadcast(&self, msg: WireMessage) {
        for s in lock(&self.subscribers).iter() {
            s.push(msg.clone());
        }
    }

    /// Final message to every subscriber. Streams stay open so clients can
    /// still hear about late guidance; the state change happens under the
    /// same lock so late subscribers see it.
    fn terminate(&self, last: WireMessage, state: SessionState) {
        let subs = lock(&self.subscribers);
        *lock(&self.last) = Some(last.clone());
        for s in subs.iter() {
            s.push(last.clone());
        }
        self.state.send_replace(state);
    }
}

pub struct Session {
    shared: Arc<Shared>,
    descriptor: SessionDescriptor,
    commands: Mutex<mpsc::Sender<Command>>,
    buffer: usize,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn state(&self) -> SessionState {
        self.shared.state.borrow().clone()
    }

    pub fn descriptor(&self) -> SessionDescriptor {
        SessionDescriptor {
            state: self.state(),
            ..self.descriptor.clone()
        }
    }

    /// A new stream for one client, starting with `Hello`. A client that
    /// joins after termination gets `Hello` and the final message.
    pub fn subscribe(&self) -> Arc<StreamBuffer> {
        let buf = Arc::new(StreamBuffer::new(self.buffer));
        buf.push(WireMessage::Hello {
            protocol: PROTOCOL_VERSION,
        });
        let mut subs = lock(&self.shared.subscribers);
        if self.shared.state.borrow().is_live() {
            subs.push(buf.clone());
        } else {
            if let Some(last) = lock(&self.shared.last).clone() {
                buf.push(last);
            }
        }
        buf
    }

    pub fn unsubscribe(&self, buf: &Arc<StreamBuffer>) {
        lock(&self.shared.subscribers).retain(|b| !Arc::ptr_eq(b, buf));
        buf.close();
    }

    async fn send(&self, make: impl FnOnce(oneshot::Sender<Result<(), GatewayError>>) -> Command) -> Result<(), GatewayError> {
        let (tx, rx) = oneshot::channel();
        lock(&self.commands).send(make(tx)).map_err(|_| stale())?;
        rx.await.map_err(|_| stale())?
    }

    pub async fn start(&self) -> Result<(), GatewayError> {
        if !self.state().is_live() {
            return Err(stale());
        }
        self.send(Command::Start).await
    }

    /// Hands a prior to the episode. The ack is streamed to every client
    /// once the runtime queues the event; a mid-episode event whose
    /// `issued_at` lies ahead is held until that tick has run.
    pub async fn guidance(&self, event: GuidanceEvent) -> Result<(), GatewayError> {
        if !self.state().is_live() {
            return Err(stale());
        }
        event.validate().map_err(|e| GatewayError::Validation(e.to_string()))?;
        self.send(|tx| Command::Guidance(event, tx)).await
    }

    /// Waits for termination.
    pub async fn wait(&self) -> SessionState {
        let mut rx = self.shared.state.subscribe();
        let state = rx.wait_for(|s| !s.is_live()).await.map(|s| s.clone());
        state.unwrap_or_else(|_| self.state())
    }

    /// Trace JSONL, once the episode has terminated.
    pub fn trace_jsonl(&self) -> Option<String> {
        lock(&self.shared.trace).clone()
    }
}

struct Driver {
    shared: Arc<Shared>,
    episode: Episode,
    recorder: Arc<Recorder>,
    commands: mpsc::Receiver<Command>,
    /// Mid-episode events waiting for their tick, in arrival order.
    held: Vec<GuidanceEvent>,
    clock: ClockMode,
    tick: Duration,
}

impl Driver {
    fn inject(&mut self, event: GuidanceEvent) -> Result<(), GatewayError> {
        let ack = self.episode.inject(event).map_err(from_runtime)?;
        self.shared.broadcast(WireMessage::GuidanceAck {
            issued_at: ack.issued_at,
            effective_tick: ack.effective_tick,
        });
        Ok(())
    }

    fn accept(&mut self, event: GuidanceEvent) -> Result<(), GatewayError> {
        let ahead = event.issued_at >= self.episode.next_tick();
        if event.timing == GuidanceTiming::MidEpisode && ahead {
            self.held.push(event);
            Ok(())
        } else {
            self.inject(event)
        }
    }

    fn release_due(&mut self) -> Result<(), GatewayError> {
        let next = self.episode.next_tick();
        let (due, held): (Vec<_>, Vec<_>) = std::mem::take(&mut self.held).into_iter().partition(|e| e.issued_at < next);
        self.held = held;
        due.into_iter().try_for_each(|e| self.inject(e))
    }

    /// Blocks until `start`; false when every handle is gone.
    fn wait_for_start(&mut self) -> bool {
        while let Ok(cmd) = self.commands.recv() {
            match cmd {
                Command::Start(reply) => {
                    let _ = reply.send(Ok(()));
                    return true;
                }
                Command::Guidance(e, reply) => {
                    let _ = reply.send(self.accept(e));
                }
            }
        }
        false
    }

    fn drain_commands(&mut self) {
        while let Ok(cmd) = self.commands.try_recv() {
            match cmd {
                Command::Start(reply) => {
                    let _ = reply.send(Err(GatewayError::Stale("session already started".into())));
                }
                Command::Guidance(e, reply) => {
                    let _ = reply.send(self.accept(e));
                }
            }
        }
    }

    fn step(&mut self) -> Result<(), GatewayError> {
        self.drain_commands();
        self.release_due()?;
        let obs = self.episode.observe();
        let before = self.episode.trace().lines.len();
        self.shared.broadcast(WireMessage::Observation {
            tick: self.episode.next_tick(),
            main_view: obs.main_view,
            wrist_view: obs.wrist_view,
            proprio: obs.proprio,
            gripper_image: obs.gripper_image,
        });
        self.episode.tick(&mut NoGuidance).map_err(from_runtime)?;
        let fresh: Vec<WireMessage> = self.episode.trace().lines[before..]
            .iter()
            .filter_map(|line| match line {
                TraceLine::Slow(s) => Some(WireMessage::Cot {
                    tick: s.tick,
                    parsed: parse_cot(&s.cot).ok(),
                    text: s.cot.clone(),
                }),
                TraceLine::Fast(f) => Some(WireMessage::Action {
                    tick: f.tick,
                    chunk_digest: lock(&self.recorder.last).clone(),
                    executed: f.actions.clone(),
                }),
                _ => None,
            })
            .collect();
        fresh.into_iter().for_each(|m| self.shared.broadcast(m));
        Ok(())
    }

    fn run(mut self) {
        if !self.wait_for_start() {
            return;
        }
        self.shared.state.send_replace(SessionState::Running);
        let start = Instant::now();
        let mut failure = None;
        while !self.episode.is_done() {
            if let Err(e) = self.step() {
                failure = Some(e);
                break;
            }
            if self.clock == ClockMode::Wall {
                // pace against the schedule so compute time does not accumulate
                let due = self.tick * self.episode.next_tick() as u32;
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
        if let Some(e) = failure {
            tracing::warn!(session = %self.shared.id, "episode failed: {e}");
            self.shared.terminate(e.to_wire(), SessionState::Failed { detail: e.to_string() });
            return;
        }
        let trace = self.episode.trace();
        let jsonl = trace.to_jsonl();
        let outcome = EpisodeOutcome {
            success: trace.success,
            obstacle_contact: trace.obstacle_contact,
            fast_ticks: trace.fast_ticks(),
            trace_digest: digest_bytes(jsonl.as_bytes()),
        };
        *lock(&self.shared.trace) = Some(jsonl);
        let result = WireMessage::Result {
            outcome: outcome.clone(),
            trace: format!("/sessions/{}/trace", self.shared.id),
        };
        self.shared.terminate(result, SessionState::Done { outcome, elapsed_ms });
    }
}

/// Session table plus everything a new episode needs.
pub struct Gateway {
    registry: ScenarioRegistry,
    reasoner: Arc<dyn Reasoner>,
    policy: Arc<dyn ActionSource>,
    config: GatewayConfig,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new(policy: Arc<dyn ActionSource>, config: GatewayConfig) -> Self {
        Self {
            registry: ScenarioRegistry::with_builtins(),
            reasoner: Arc::new(OracleReasoner),
            policy,
            config,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Allocates a session and its episode; the episode waits for `start`
    /// unless `autostart` is set.
    pub fn create(&self, req: CreateSession) -> Result<SessionDescriptor, GatewayError> {
        let mut runtime = req.runtime.clone().unwrap_or_default();
        runtime.clock_mode = req.clock_mode.unwrap_or(self.config.clock_mode);
        if self.registry.get(&req.scenario).is_err() {
            return Err(GatewayError::BadRequest(format!("unknown scenario {:?}", req.scenario)));
        }
        let mut sessions = lock(&self.sessions);
        let live = sessions.values().filter(|s| s.state().is_live()).count();
        if live >= self.config.capacity {
            return Err(GatewayError::Capacity(self.config.capacity));
        }
        let recorder = Arc::new(Recorder {
            inner: self.policy.clone(),
            last: Mutex::new(String::new()),
        });
        let episode = Episode::new(
            &self.registry,
            &req.scenario,
            &req.perturbation,
            self.reasoner.clone(),
            recorder.clone(),
            runtime.clone(),
            req.seed,
        )
        .map_err(|e| GatewayError::BadRequest(e.to_string()))?;

        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let shared = Arc::new(Shared {
            id: id.clone(),
            state: watch::Sender::new(SessionState::Pending),
            subscribers: Mutex::new(Vec::new()),
            trace: Mutex::new(None),
            last: Mutex::new(None),
        });
        let (tx, rx) = mpsc::channel();
        let driver = Driver {
            shared: shared.clone(),
            episode,
            recorder,
            commands: rx,
            held: Vec::new(),
            clock: runtime.clock_mode,
            tick: Duration::from_millis(runtime.tick_ms),
        };
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || driver.run())
            .map_err(|e| GatewayError::Internal(e.to_string()))?;
        let session = Arc::new(Session {
            shared,
            descriptor: SessionDescriptor {
                id: id.clone(),
                scenario: req.scenario,
                seed: req.seed,
                perturbation: req.perturbation,
                runtime,
                state: SessionState::Pending,
            },
            commands: Mutex::new(tx.clone()),
            buffer: self.config.stream_buffer,
        });
        if req.autostart {
            // the driver answers on a oneshot nobody awaits
            let (reply, _) = oneshot::channel();
            let _ = tx.send(Command::Start(reply));
        }
        let descriptor = session.descriptor();
        sessions.insert(id, session);
        Ok(descriptor)
    }

    pub fn list(&self) -> Vec<SessionDescriptor> {
        lock(&self.sessions).values().map(|s| s.descriptor()).collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, GatewayError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::NotFound(id.to_string()))
    }
}
