//! HTTP endpoints and the WebSocket stream.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;

use crate::buffer::StreamBuffer;
use crate::session::{CreateSession, Gateway, GatewayError, Session};
use crate::wire::{Envelope, WireMessage};

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match &self {
            GatewayError::BadRequest(_) | GatewayError::Validation(_) => StatusCode::BAD_REQUEST,
            GatewayError::Stale(_) | GatewayError::NotReady(_) => StatusCode::CONFLICT,
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::Capacity(_) => StatusCode::SERVICE_UNAVAILABLE,
            GatewayError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.to_wire())).into_response()
    }
}

type Shared = State<Arc<Gateway>>;

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/result", get(result))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(gateway)
}

pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

async fn create(State(gw): Shared, body: Bytes) -> Result<impl IntoResponse, GatewayError> {
    let req: CreateSession = serde_json::from_slice(&body).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(gw.create(req)?)))
}

async fn list(State(gw): Shared) -> impl IntoResponse {
    Json(gw.list())
}

async fn describe(State(gw): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, GatewayError> {
    Ok(Json(gw.get(&id)?.descriptor()))
}

async fn start(State(gw): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, GatewayError> {
    let session = gw.get(&id)?;
    session.start().await?;
    Ok((StatusCode::ACCEPTED, Json(session.descriptor())))
}

async fn result(State(gw): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, GatewayError> {
    let d = gw.get(&id)?.descriptor();
    if d.state.is_live() {
        return Err(GatewayError::NotReady(format!("session {id} has not terminated")));
    }
    Ok(Json(d))
}

async fn trace(State(gw): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, GatewayError> {
    let jsonl = gw
        .get(&id)?
        .trace_jsonl()
        .ok_or_else(|| GatewayError::NotReady(format!("session {id} has no trace yet")))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], jsonl))
}

async fn stream(ws: WebSocketUpgrade, State(gw): Shared, Path(id): Path<String>) -> Result<Response, GatewayError> {
    let session = gw.get(&id)?;
    Ok(ws.on_upgrade(move |socket| client(socket, session)))
}

async fn client(socket: WebSocket, session: Arc<Session>) {
    let buf = session.subscribe();
    let (mut sink, mut incoming) = socket.split();
    let out = buf.clone();
    let id = session.id().to_string();
    let writer = tokio::spawn(async move {
        let mut seq = 0;
        while let Some(message) = out.pop().await {
            let line = Envelope {
                session: id.clone(),
                seq,
                message,
            }
            .to_line();
            seq += 1;
            if sink.send(Message::Text(line.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    while let Some(Ok(msg)) = incoming.next().await {
        match msg {
            Message::Text(text) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    handle(&session, &buf, line).await;
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    session.unsubscribe(&buf);
    let _ = writer.await;
}

/// Client messages: `guidance` and `start`. Failures go back to this
/// client only.
async fn handle(session: &Session, buf: &StreamBuffer, line: &str) {
    let outcome = match serde_json::from_str::<WireMessage>(line) {
        Ok(WireMessage::Guidance { event }) => session.guidance(event).await,
        Ok(WireMessage::Start) => session.start().await,
        Ok(other) => Err(GatewayError::BadRequest(format!(
            "clients may send guidance or start, not {}",
            serde_json::to_value(&other).ok().and_then(|v| v["type"].as_str().map(String::from)).unwrap_or_default()
        ))),
        Err(e) => Err(GatewayError::BadRequest(e.to_string())),
    };
    if let Err(e) = outcome {
        buf.push(e.to_wire());
    }
}
