//! Messages exchanged over a session stream.

use gta_core::codec::StructuredCot;
use gta_core::geometry::ImagePoint;
use gta_core::guide::GuidanceEvent;
use gta_core::sim::{Action, Proprio, ViewObject, WristObject};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Error classes carried by [`WireMessage::Error`] and HTTP error bodies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    BadRequest,
    Validation,
    Stale,
    NotFound,
    Capacity,
    NotReady,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub obstacle_contact: bool,
    pub fast_ticks: u64,
    /// Digest of the episode trace JSONL.
    pub trace_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    /// First message of every stream; the envelope names the session.
    Hello {
        protocol: u32,
    },
    Observation {
        tick: u64,
        main_view: Vec<ViewObject>,
        wrist_view: Vec<WristObject>,
        proprio: Proprio,
        gripper_image: ImagePoint,
    },
    Cot {
        tick: u64,
        text: String,
        /// Absent when the text fails to parse (never for the oracle).
        parsed: Option<StructuredCot>,
    },
    Action {
        tick: u64,
        chunk_digest: String,
        /// Actions executed this tick, in order.
        executed: Vec<Action>,
    },
    /// Client to server.
    Guidance {
        event: GuidanceEvent,
    },
    /// Client to server: begin a pending session.
    Start,
    GuidanceAck {
        issued_at: u64,
        effective_tick: u64,
    },
    /// Stands in for frames dropped because the client fell behind.
    Gap {
        dropped: u64,
        first_tick: u64,
        last_tick: u64,
    },
    Result {
        outcome: EpisodeOutcome,
        /// Path of the trace endpoint.
        trace: String,
    },
    Error {
        class: ErrorClass,
        detail: String,
    },
}

impl WireMessage {
    pub fn error(class: ErrorClass, detail: impl Into<String>) -> Self {
        WireMessage::Error {
            class,
            detail: detail.into(),
        }
    }

    /// Frames the buffer may drop under backpressure.
    pub fn is_droppable(&self) -> bool {
        matches!(self, WireMessage::Observation { .. } | WireMessage::Action { .. })
    }

    pub fn tick(&self) -> Option<u64> {
        match self {
            WireMessage::Observation { tick, .. } | WireMessage::Cot { tick, .. } | WireMessage::Action { tick, .. } => {
                Some(*tick)
            }
            _ => None,
        }
    }
}

/// A server message as sent: session id and per-stream sequence number
/// alongside the message fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub session: String,
    pub seq: u64,
    #[serde(flatten)]
    pub message: WireMessage,
}

impl Envelope {
    /// One NDJSON line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages always serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches('\n'))
    }
}
