//! Network gateway: live episodes as NDJSON streams over WebSocket, with
//! guidance flowing back from clients.

pub mod buffer;
pub mod http;
pub mod session;
pub mod wire;

pub use buffer::StreamBuffer;
pub use http::{router, serve};
pub use session::{CreateSession, Gateway, GatewayConfig, GatewayError, Session, SessionDescriptor, SessionState};
pub use wire::{Envelope, EpisodeOutcome, ErrorClass, WireMessage, PROTOCOL_VERSION};
