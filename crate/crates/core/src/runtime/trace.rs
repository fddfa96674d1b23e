use serde::{Deserialize, Serialize};

use super::{GuidanceAck, RuntimeConfig};
use crate::guide::GuidanceEvent;
use crate::reasoner::GroundingRule;
use crate::sim::{Action, PerturbationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowRecord {
    pub tick: u64,
    /// CoT as handed to the action head, in codec text form.
    pub cot: String,
    pub guidance_applied: Vec<GuidanceEvent>,
    /// Simulator id of the grounded object, when the view carried one.
    pub grounded_object: Option<u32>,
    pub rule: GroundingRule,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastRecord {
    pub tick: u64,
    pub obs_digest: String,
    pub memory_tick: u64,
    pub staleness: u64,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRecord {
    pub event: GuidanceEvent,
    pub ack: GuidanceAck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Slow(SlowRecord),
    Fast(FastRecord),
    Guidance(GuidanceRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scenario: String,
    pub seed: u64,
    pub instruction: String,
    pub target_id: u32,
    pub config: RuntimeConfig,
    pub perturbation: PerturbationConfig,
    /// Records in the order they happened.
    pub lines: Vec<TraceLine>,
    pub success: bool,
    pub obstacle_contact: bool,
    pub sim_steps: u64,
}

#[derive(Serialize)]
struct Header<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    scenario: &'a str,
    seed: u64,
    instruction: &'a str,
    target_id: u32,
    config: &'a RuntimeConfig,
    perturbation: &'a PerturbationConfig,
}

#[derive(Serialize)]
struct Outcome {
    #[serde(rename = "type")]
    kind: &'static str,
    success: bool,
    obstacle_contact: bool,
    sim_steps: u64,
}

impl EpisodeTrace {
    pub fn fast(&self) -> impl Iterator<Item = &FastRecord> {
        self.lines.iter().filter_map(|l| match l {
            TraceLine::Fast(r) => Some(r),
            _ => None,
        })
    }

    pub fn slow(&self) -> impl Iterator<Item = &SlowRecord> {
        self.lines.iter().filter_map(|l| match l {
            TraceLine::Slow(r) => Some(r),
            _ => None,
        })
    }

    pub fn guidance(&self) -> impl Iterator<Item = &GuidanceRecord> {
        self.lines.iter().filter_map(|l| match l {
            TraceLine::Guidance(r) => Some(r),
            _ => None,
        })
    }

    pub fn fast_ticks(&self) -> u64 {
        self.fast().count() as u64
    }

    /// Header line, one line per record, then an outcome line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            kind: "header",
            scenario: &self.scenario,
            seed: self.seed,
            instruction: &self.instruction,
            target_id: self.target_id,
            config: &self.config,
            perturbation: &self.perturbation,
        };
        let push = |out: &mut String, v: String| {
            out.push_str(&v);
            out.push('\n');
        };
        push(&mut out, serde_json::to_string(&header).expect("serializable"));
        for l in &self.lines {
            push(&mut out, serde_json::to_string(l).expect("serializable"));
        }
        let outcome = Outcome {
            kind: "outcome",
            success: self.success,
            obstacle_contact: self.obstacle_contact,
            sim_steps: self.sim_steps,
        };
        push(&mut out, serde_json::to_string(&outcome).expect("serializable"));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessReport {
    pub max: u64,
    /// `histogram[s]` counts fast ticks with staleness `s`.
    pub histogram: Vec<u64>,
}

pub fn staleness_report(trace: &EpisodeTrace) -> StalenessReport {
    let mut histogram = Vec::new();
    let mut max = 0;
    for r in trace.fast() {
        let s = r.staleness as usize;
        if histogram.len() <= s {
            histogram.resize(s + 1, 0);
        }
        histogram[s] += 1;
        max = max.max(r.staleness);
    }
    StalenessReport { max, histogram }
}
