//! Evaluation harness: shift suites, guidance modalities, CoT ablations,
//! failure recovery and report emission.

mod report;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demos::{OracleGuidance, OraclePrior};
use crate::digest::{digest_bytes, digest_json};
use crate::flow::{write_model, FlowModel};
use crate::reasoner::{Ablation, OracleReasoner};
use crate::runtime::{run_episode, staleness_report, ActionSource, EpisodeTrace, RuntimeConfig, RuntimeError};
use crate::sim::{
    LanguageShift, LightingShift, PerturbationConfig, RobotStateShift, ScenarioRegistry, SensorShift,
};

pub use report::{emit_report, render_csv, render_markdown, ReportFormat};

/// Actuation noise on the obstacle suite; equal to the demo collection
/// noise.
pub const OBSTACLE_ACTUATION_NOISE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftCategory {
    None,
    Sensor,
    Lighting,
    RobotState,
    Language,
    UnseenObject,
    DistractorColor,
    DistractorPosition,
    Obstacle,
}

impl ShiftCategory {
    pub const ALL: [ShiftCategory; 9] = [
        ShiftCategory::None,
        ShiftCategory::Sensor,
        ShiftCategory::Lighting,
        ShiftCategory::RobotState,
        ShiftCategory::Language,
        ShiftCategory::UnseenObject,
        ShiftCategory::DistractorColor,
        ShiftCategory::DistractorPosition,
        ShiftCategory::Obstacle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftCategory::None => "none",
            ShiftCategory::Sensor => "sensor",
            ShiftCategory::Lighting => "lighting",
            ShiftCategory::RobotState => "robot_state",
            ShiftCategory::Language => "language",
            ShiftCategory::UnseenObject => "unseen_object",
            ShiftCategory::DistractorColor => "distractor_color",
            ShiftCategory::DistractorPosition => "distractor_position",
            ShiftCategory::Obstacle => "obstacle",
        }
    }

    pub fn scenario(self) -> &'static str {
        match self {
            ShiftCategory::UnseenObject => "unseen_object",
            ShiftCategory::DistractorColor => "color_distractor",
            ShiftCategory::DistractorPosition => "position_distractor",
            ShiftCategory::Obstacle => "obstacle",
            _ => "single_target",
        }
    }

    pub fn perturbation(self) -> PerturbationConfig {
        let mut p = PerturbationConfig::none();
        match self {
            ShiftCategory::Sensor => {
                p.sensor = Some(SensorShift {
                    rotation_deg: 5.0,
                    scale: 0.95,
                    translation: [0.02, -0.02],
                })
            }
            ShiftCategory::Lighting => {
                p.lighting = Some(LightingShift {
                    position_noise: 0.01,
                    color_dropout: 0.3,
                })
            }
            ShiftCategory::RobotState => {
                p.robot_state = Some(RobotStateShift {
                    init_radius: 0.1,
                    actuation_noise: 0.01,
                })
            }
            ShiftCategory::Language => p.language = Some(LanguageShift { lexicon_seed: 7 }),
            ShiftCategory::Obstacle => {
                p.robot_state = Some(RobotStateShift {
                    init_radius: 0.0,
                    actuation_noise: OBSTACLE_ACTUATION_NOISE,
                })
            }
            _ => {}
        }
        p
    }

    pub fn is_distractor(self) -> bool {
        matches!(self, ShiftCategory::DistractorColor | ShiftCategory::DistractorPosition)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    None,
    Point,
    Box,
    Trace,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::None, Modality::Point, Modality::Box, Modality::Trace];

    pub fn name(self) -> &'static str {
        match self {
            Modality::None => "none",
            Modality::Point => "point",
            Modality::Box => "box",
            Modality::Trace => "trace",
        }
    }

    pub fn oracle(self) -> Option<OraclePrior> {
        match self {
            Modality::None => None,
            Modality::Point => Some(OraclePrior::Point),
            Modality::Box => Some(OraclePrior::Box),
            Modality::Trace => Some(OraclePrior::Trace),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid suite {cell}: {reason}")]
    Suite { cell: String, reason: String },
    #[error("{cell} seed {seed}: {source}")]
    Episode {
        cell: String,
        seed: u64,
        source: RuntimeError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One evaluation cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub shift: ShiftCategory,
    pub episodes: usize,
    /// Episodes use seeds `first_seed..first_seed + episodes`.
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "default_modality")]
    pub modality: Modality,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "eval_runtime")]
    pub runtime: RuntimeConfig,
}

fn default_modality() -> Modality {
    Modality::None
}

/// Receding-horizon execution used for learned policies.
pub fn eval_runtime() -> RuntimeConfig {
    RuntimeConfig {
        chunk_stride: Some(1),
        max_fast_ticks: 80,
        ..RuntimeConfig::default()
    }
}

impl SuiteConfig {
    pub fn new(shift: ShiftCategory, episodes: usize) -> Self {
        Self {
            shift,
            episodes,
            first_seed: 0,
            modality: Modality::None,
            ablation: Ablation::NONE,
            runtime: eval_runtime(),
        }
    }

    pub fn with_modality(mut self, m: Modality) -> Self {
        self.modality = m;
        self
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ablation = a;
        self
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.shift.name(), self.modality.name(), self.ablation.label())
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.episodes as u64
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |r: &str| {
            Err(BenchError::Suite {
                cell: self.label(),
                reason: r.to_string(),
            })
        };
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.modality == Modality::Trace && self.shift != ShiftCategory::Obstacle {
            return bad("trace guidance is only evaluated on the obstacle suite");
        }
        self.runtime.validate().or_else(|e| bad(&e.to_string()))
    }

    fn runtime_config(&self) -> RuntimeConfig {
        RuntimeConfig {
            ablation: self.ablation,
            ..self.runtime.clone()
        }
    }
}

/// Per-episode outcome kept for failure analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub success: bool,
    pub grounding_correct: bool,
    pub obstacle_contact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub suite: SuiteConfig,
    pub episodes: usize,
    pub successes: usize,
    pub grounding_correct: usize,
    pub obstacle_contacts: usize,
    pub guidance_events: usize,
    pub mean_staleness: f64,
    pub max_staleness: u64,
    /// Digest over the cell's JSON-lines traces, in seed order.
    pub trace_digest: String,
    pub outcomes: Vec<EpisodeOutcome>,
}

impl CellReport {
    pub fn success_rate(&self) -> f64 {
        ratio(self.successes, self.episodes)
    }

    pub fn grounding_rate(&self) -> f64 {
        ratio(self.grounding_correct, self.episodes)
    }

    /// 90% Wilson interval on the success rate.
    pub fn success_interval(&self) -> (f64, f64) {
        wilson_interval(self.successes, self.episodes, Z90)
    }
}

fn ratio(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<CellReport>,
    pub config_hash: String,
    pub model_hash: String,
}

/// Two-sided 90% normal quantile.
pub const Z90: f64 = 1.644_853_626_951_472_2;

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (n, p) = (n as f64, k as f64 / n as f64);
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Digest of a model's serialized parameters.
pub fn model_hash(model: &FlowModel) -> String {
    let mut buf = Vec::new();
    write_model(model, &mut buf).expect("writing to memory");
    digest_bytes(&buf)
}

fn run_one(
    registry: &ScenarioRegistry,
    policy: &Arc<dyn ActionSource>,
    suite: &SuiteConfig,
    prior: Option<OraclePrior>,
    seed: u64,
) -> Result<EpisodeTrace, BenchError> {
    run_episode(
        registry,
        suite.shift.scenario(),
        &suite.shift.perturbation(),
        Arc::new(OracleReasoner),
        policy.clone(),
        &suite.runtime_config(),
        &mut OracleGuidance(prior),
        seed,
    )
    .map_err(|e| BenchError::Episode {
        cell: suite.label(),
        seed,
        source: e,
    })
}

fn outcome(t: &EpisodeTrace) -> EpisodeOutcome {
    EpisodeOutcome {
        seed: t.seed,
        success: t.success,
        grounding_correct: t.slow().next().and_then(|s| s.grounded_object) == Some(t.target_id),
        obstacle_contact: t.obstacle_contact,
    }
}

fn summarize(suite: &SuiteConfig, traces: &[EpisodeTrace]) -> CellReport {
    let outcomes: Vec<EpisodeOutcome> = traces.iter().map(outcome).collect();
    let (mut sum, mut count, mut max) = (0u64, 0u64, 0u64);
    for t in traces {
        let s = staleness_report(t);
        max = max.max(s.max);
        for (v, n) in s.histogram.iter().enumerate() {
            sum += v as u64 * n;
            count += n;
        }
    }
    let jsonl: String = traces.iter().map(EpisodeTrace::to_jsonl).collect();
    CellReport {
        suite: suite.clone(),
        episodes: traces.len(),
        successes: outcomes.iter().filter(|o| o.success).count(),
        grounding_correct: outcomes.iter().filter(|o| o.grounding_correct).count(),
        obstacle_contacts: outcomes.iter().filter(|o| o.obstacle_contact).count(),
        guidance_events: traces.iter().map(|t| t.guidance().count()).sum(),
        mean_staleness: if count > 0 { sum as f64 / count as f64 } else { 0.0 },
        max_staleness: max,
        trace_digest: digest_bytes(jsonl.as_bytes()),
        outcomes,
    }
}

/// Runs every cell and keeps the traces, grouped per cell in seed order.
pub fn run_suite_with_traces(
    registry: &ScenarioRegistry,
    policy: Arc<dyn ActionSource>,
    suites: &[SuiteConfig],
    model_hash: &str,
) -> Result<(Report, Vec<Vec<EpisodeTrace>>), BenchError> {
    for s in suites {
        s.validate()?;
    }
    let jobs: Vec<(usize, u64)> = suites
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.seeds().map(move |seed| (i, seed)))
        .collect();
    let results: Vec<EpisodeTrace> = jobs
        .par_iter()
        .map(|&(i, seed)| run_one(registry, &policy, &suites[i], suites[i].modality.oracle(), seed))
        .collect::<Result<_, _>>()?;
    let mut grouped: Vec<Vec<EpisodeTrace>> = vec![Vec::new(); suites.len()];
    for ((i, _), t) in jobs.iter().zip(results) {
        grouped[*i].push(t);
    }
    let report = Report {
        cells: suites.iter().zip(&grouped).map(|(s, t)| summarize(s, t)).collect(),
        config_hash: digest_json(&suites),
        model_hash: model_hash.to_string(),
    };
    Ok((report, grouped))
}

/// Runs every cell in parallel. The report does not depend on scheduling.
pub fn run_suite(
    registry: &ScenarioRegistry,
    policy: Arc<dyn ActionSource>,
    suites: &[SuiteConfig],
    model_hash: &str,
) -> Result<Report, BenchError> {
    run_suite_with_traces(registry, policy, suites, model_hash).map(|(r, _)| r)
}

/// Prior a recovery run uses by default: a trace on the obstacle suite, a
/// point elsewhere.
pub fn default_recovery_prior(shift: ShiftCategory) -> OraclePrior {
    if shift == ShiftCategory::Obstacle {
        OraclePrior::Trace
    } else {
        OraclePrior::Point
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub cell: String,
    pub prior: Option<OraclePrior>,
    /// Failures available in the original cell.
    pub failures: usize,
    pub rerun: usize,
    pub recovered: usize,
    /// Re-run failures whose original grounding was wrong.
    pub grounding_failures: usize,
    pub grounding_recovered: usize,
    /// Re-run outcomes, in seed order.
    pub outcomes: Vec<EpisodeOutcome>,
}

impl RecoveryRow {
    pub fn recovery_rate(&self) -> f64 {
        ratio(self.recovered, self.rerun)
    }

    pub fn grounding_recovery_rate(&self) -> f64 {
        ratio(self.grounding_recovered, self.grounding_failures)
    }
}

/// How a recovery run picks its prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// [`default_recovery_prior`] for the cell's shift.
    Oracle,
    Fixed(OraclePrior),
    /// Re-run unchanged; a determinism control.
    NoPrior,
}

/// Re-runs up to `per_cell` failed episodes of each cell with the same
/// seeds plus an up-front prior.
pub fn failure_recovery(
    registry: &ScenarioRegistry,
    policy: Arc<dyn ActionSource>,
    report: &Report,
    per_cell: usize,
    source: PriorSource,
) -> Result<Vec<RecoveryRow>, BenchError> {
    report
        .cells
        .iter()
        .map(|cell| {
            let prior = match source {
                PriorSource::Oracle => Some(default_recovery_prior(cell.suite.shift)),
                PriorSource::Fixed(p) => Some(p),
                PriorSource::NoPrior => None,
            };
            let failed: Vec<&EpisodeOutcome> = cell.outcomes.iter().filter(|o| !o.success).collect();
            let picked = &failed[..failed.len().min(per_cell)];
            let outcomes: Vec<EpisodeOutcome> = picked
                .par_iter()
                .map(|o| run_one(registry, &policy, &cell.suite, prior, o.seed).map(|t| outcome(&t)))
                .collect::<Result<_, _>>()?;
            let grounding: Vec<bool> = picked.iter().map(|o| !o.grounding_correct).collect();
            Ok(RecoveryRow {
                cell: cell.suite.label(),
                prior,
                failures: failed.len(),
                rerun: picked.len(),
                recovered: outcomes.iter().filter(|o| o.success).count(),
                grounding_failures: grounding.iter().filter(|g| **g).count(),
                grounding_recovered: outcomes.iter().zip(&grounding).filter(|(o, g)| **g && o.success).count(),
                outcomes,
            })
        })
        .collect()
}
