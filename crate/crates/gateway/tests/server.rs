//! End-to-end: a real listener, HTTP requests and WebSocket clients.

use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use gta_core::codec::snap_point;
use gta_core::demos::MemoryExpert;
use gta_core::flow::{ActionChunk, FlowError};
use gta_core::geometry::{ImageBox, ImagePoint};
use gta_core::guide::{GuidanceEvent, GuidanceSource, SpatialPrior};
use gta_core::reasoner::OracleReasoner;
use gta_core::runtime::{run_episode, ActionContext, ActionSource, ClockMode, RuntimeConfig, ScriptedGuidance};
use gta_core::sim::{PerturbationConfig, ScenarioRegistry};
use gta_gateway::{
    serve, CreateSession, Envelope, ErrorClass, Gateway, GatewayConfig, SessionDescriptor, SessionState, WireMessage,
};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

struct Server {
    base: String,
    ws: String,
    http: reqwest::Client,
}

async fn start_server(policy: Arc<dyn ActionSource>, config: GatewayConfig) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, Arc::new(Gateway::new(policy, config))));
    Server {
        base: format!("http://{addr}"),
        ws: format!("ws://{addr}"),
        http: reqwest::Client::new(),
    }
}

fn expert() -> Arc<dyn ActionSource> {
    Arc::new(MemoryExpert { k: 8 })
}

/// Open and still, so episodes always run to the tick limit.
struct Idle;

impl ActionSource for Idle {
    fn chunk(&self, _: &ActionContext<'_>) -> Result<ActionChunk, FlowError> {
        Ok(ActionChunk {
            steps: vec![[0.0, 0.0, 1.0]; 8],
        })
    }
}

impl Server {
    async fn create(&self, req: &CreateSession) -> reqwest::Response {
        self.http.post(format!("{}/sessions", self.base)).json(req).send().await.unwrap()
    }

    async fn create_ok(&self, req: &CreateSession) -> SessionDescriptor {
        let resp = self.create(req).await;
        assert_eq!(resp.status(), 201);
        resp.json().await.unwrap()
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn connect(&self, id: &str) -> Ws {
        let (ws, _) = tokio_tungstenite::connect_async(format!("{}/sessions/{id}/stream", self.ws))
            .await
            .unwrap();
        ws
    }

    async fn wait_done(&self, id: &str) -> SessionDescriptor {
        for _ in 0..2000 {
            let resp = self.get(&format!("/sessions/{id}/result")).await;
            if resp.status() == 200 {
                return resp.json().await.unwrap();
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("session {id} never finished");
    }
}

async fn send(ws: &mut Ws, msg: &WireMessage) {
    ws.send(Message::Text(serde_json::to_string(msg).unwrap().into())).await.unwrap();
}

async fn next(ws: &mut Ws) -> Envelope {
    loop {
        match tokio::time::timeout(Duration::from_secs(30), ws.next()).await.unwrap() {
            Some(Ok(Message::Text(t))) => return Envelope::from_line(&t).unwrap(),
            Some(Ok(_)) => continue,
            other => panic!("stream ended: {other:?}"),
        }
    }
}

/// Every message up to and including `Result`.
async fn until_result(ws: &mut Ws) -> Vec<Envelope> {
    let mut out = Vec::new();
    loop {
        let env = next(ws).await;
        let done = matches!(env.message, WireMessage::Result { .. });
        out.push(env);
        if done {
            return out;
        }
    }
}

fn click(x: f64, y: f64, at: u64) -> GuidanceEvent {
    GuidanceEvent::mid_episode(SpatialPrior::point(x, y), GuidanceSource::User, at)
}

fn sim_request(scenario: &str, seed: u64, runtime: RuntimeConfig) -> CreateSession {
    CreateSession {
        seed,
        runtime: Some(runtime),
        clock_mode: Some(ClockMode::Simulated),
        ..CreateSession::new(scenario)
    }
}

async fn error_body(resp: reqwest::Response) -> (u16, WireMessage) {
    (resp.status().as_u16(), resp.json().await.unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn creates_get_distinct_ids_and_bad_requests_are_classed() {
    let s = start_server(expert(), GatewayConfig::default()).await;
    let a = s.create_ok(&CreateSession::new("single_target")).await;
    let b = s.create_ok(&CreateSession::new("single_target")).await;
    assert_ne!(a.id, b.id);
    assert_eq!(a.state, SessionState::Pending);
    let listed: Vec<SessionDescriptor> = s.get("/sessions").await.json().await.unwrap();
    assert_eq!(listed.iter().map(|d| d.id.clone()).collect::<Vec<_>>(), vec![a.id.clone(), b.id.clone()]);

    let (status, body) = error_body(s.create(&CreateSession::new("no_such_scene")).await).await;
    assert_eq!(status, 400);
    assert!(matches!(body, WireMessage::Error { class: ErrorClass::BadRequest, .. }), "{body:?}");
    let (status, body) = error_body(s.get("/sessions/nope").await).await;
    assert_eq!(status, 404);
    assert!(matches!(body, WireMessage::Error { class: ErrorClass::NotFound, .. }));
    let (status, _) = error_body(s.get(&format!("/sessions/{}/result", b.id)).await).await;
    assert_eq!(status, 409);
}

#[tokio::test(flavor = "multi_thread")]
async fn capacity_counts_only_live_sessions() {
    let config = GatewayConfig {
        capacity: 1,
        ..Default::default()
    };
    let s = start_server(expert(), config).await;
    let first = s
        .create_ok(&CreateSession {
            autostart: true,
            ..CreateSession::new("single_target")
        })
        .await;
    let resp = s.create(&CreateSession::new("single_target")).await;
    // the first may already have finished; otherwise capacity applies
    if resp.status() != 201 {
        let (status, body) = error_body(resp).await;
        assert_eq!(status, 503);
        assert!(matches!(body, WireMessage::Error { class: ErrorClass::Capacity, .. }));
        s.wait_done(&first.id).await;
        s.create_ok(&CreateSession::new("single_target")).await;
    }
    let (status, _) = error_body(s.create(&CreateSession::new("single_target")).await).await;
    assert_eq!(status, 503);
}

/// A scripted client: click at tick 7, start, read to the end.
async fn scripted(s: &Server, seed: u64) -> (String, Vec<Envelope>) {
    let runtime = RuntimeConfig {
        chunk_stride: Some(1),
        max_fast_ticks: 40,
        ..Default::default()
    };
    let d = s.create_ok(&sim_request("color_distractor", seed, runtime)).await;
    let mut ws = s.connect(&d.id).await;
    send(&mut ws, &WireMessage::Guidance { event: click(0.3, 0.4, 7) }).await;
    send(&mut ws, &WireMessage::Start).await;
    (d.id, until_result(&mut ws).await)
}

fn without_session(envs: &[Envelope]) -> Vec<(u64, WireMessage)> {
    envs.iter()
        .map(|e| {
            let mut m = e.message.clone();
            if let WireMessage::Result { trace, .. } = &mut m {
                *trace = trace.replace(&e.session, "{id}");
            }
            (e.seq, m)
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_simulated_sessions_stream_identically() {
    let s = start_server(expert(), GatewayConfig::default()).await;
    let (id, a) = scripted(&s, 4).await;
    let (_, b) = scripted(&s, 4).await;
    assert_eq!(without_session(&a), without_session(&b));
    assert!(a.iter().all(|e| e.session == id));
    let seqs: Vec<u64> = a.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..a.len() as u64).collect::<Vec<_>>());
    assert!(matches!(a[0].message, WireMessage::Hello { protocol: 1 }));

    // one Cot per slow period of Observations
    let obs = a.iter().filter(|e| matches!(e.message, WireMessage::Observation { .. })).count();
    let cots: Vec<&Envelope> = a.iter().filter(|e| matches!(e.message, WireMessage::Cot { .. })).collect();
    assert_eq!(cots.len(), obs.div_ceil(5));
    let acts = a.iter().filter(|e| matches!(e.message, WireMessage::Action { .. })).count();
    assert_eq!(acts, obs);

    // the streamed CoTs are the ones the runtime produces for the same click
    let reference = run_episode(
        &ScenarioRegistry::with_builtins(),
        "color_distractor",
        &PerturbationConfig::none(),
        Arc::new(OracleReasoner),
        expert(),
        &RuntimeConfig {
            chunk_stride: Some(1),
            max_fast_ticks: 40,
            ..Default::default()
        },
        &mut ScriptedGuidance(vec![click(0.3, 0.4, 7)]),
        4,
    )
    .unwrap();
    let texts: Vec<String> = cots
        .iter()
        .map(|e| match &e.message {
            WireMessage::Cot { text, .. } => text.clone(),
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(texts, reference.slow().map(|r| r.cot.clone()).collect::<Vec<_>>());
    match &a.last().unwrap().message {
        WireMessage::Result { outcome, trace } => {
            assert_eq!(outcome.success, reference.success);
            assert_eq!(outcome.fast_ticks, reference.fast_ticks());
            assert_eq!(trace, &format!("/sessions/{id}/trace"));
            let body = s.get(trace).await.text().await.unwrap();
            assert_eq!(gta_core::digest::digest_bytes(body.as_bytes()), outcome.trace_digest);
        }
        other => panic!("{other:?}"),
    }
}

fn idle_runtime(ticks: u64) -> RuntimeConfig {
    RuntimeConfig {
        max_fast_ticks: ticks,
        ..Default::default()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn click_is_acked_for_the_next_boundary_and_shapes_that_cot() {
    let s = start_server(Arc::new(Idle), GatewayConfig::default()).await;
    let d = s.create_ok(&sim_request("two_red_blocks", 3, idle_runtime(12))).await;
    let mut ws = s.connect(&d.id).await;
    send(&mut ws, &WireMessage::Guidance { event: click(0.42, 0.35, 7) }).await;
    send(&mut ws, &WireMessage::Start).await;
    let msgs = until_result(&mut ws).await;
    let acks: Vec<_> = msgs
        .iter()
        .filter_map(|e| match e.message {
            WireMessage::GuidanceAck { issued_at, effective_tick } => Some((e.seq, issued_at, effective_tick)),
            _ => None,
        })
        .collect();
    assert_eq!(acks.len(), 1);
    assert_eq!((acks[0].1, acks[0].2), (7, 10));
    let want = snap_point(&ImagePoint::new(0.42, 0.35)).unwrap();
    for e in &msgs {
        if let WireMessage::Cot { tick, parsed, .. } = &e.message {
            let hit = parsed.as_ref().unwrap().affordance == Some(want);
            assert_eq!(hit, *tick >= 10, "cot at {tick}");
            // the ack precedes the CoT it shapes
            if *tick == 10 {
                assert!(acks[0].0 < e.seq);
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_box_and_late_guidance_are_refused() {
    let s = start_server(expert(), GatewayConfig::default()).await;
    let d = s.create_ok(&sim_request("single_target", 0, idle_runtime(30))).await;
    let mut ws = s.connect(&d.id).await;
    assert!(matches!(next(&mut ws).await.message, WireMessage::Hello { .. }));
    let bad = GuidanceEvent::mid_episode(
        SpatialPrior::bbox(ImageBox::new(0.6, 0.2, 0.4, 0.5)),
        GuidanceSource::User,
        0,
    );
    send(&mut ws, &WireMessage::Guidance { event: bad }).await;
    match next(&mut ws).await.message {
        WireMessage::Error { class, detail } => {
            assert_eq!(class, ErrorClass::Validation);
            assert!(detail.contains("x_min ≥ x_max"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert!(matches!(
        next(&mut ws).await.message,
        WireMessage::Error { class: ErrorClass::BadRequest, .. }
    ));
    send(&mut ws, &WireMessage::Start).await;
    until_result(&mut ws).await;
    send(&mut ws, &WireMessage::Guidance { event: click(0.5, 0.5, 0) }).await;
    assert!(matches!(
        next(&mut ws).await.message,
        WireMessage::Error { class: ErrorClass::Stale, .. }
    ));
    // a client joining afterwards sees Hello and the Result
    let mut late = s.connect(&d.id).await;
    assert!(matches!(next(&mut late).await.message, WireMessage::Hello { .. }));
    assert!(matches!(next(&mut late).await.message, WireMessage::Result { .. }));
}

/// Completion time of one wall-clock session; `attach` adds a client that
/// never reads.
async fn wall_run(s: &Server, attach: bool) -> f64 {
    let req = CreateSession {
        runtime: Some(RuntimeConfig {
            tick_ms: 10,
            ..idle_runtime(100)
        }),
        clock_mode: Some(ClockMode::Wall),
        ..CreateSession::new("single_target")
    };
    let d = s.create_ok(&req).await;
    let _silent = if attach { Some(s.connect(&d.id).await) } else { None };
    let resp = s.http.post(format!("{}/sessions/{}/start", s.base, d.id)).send().await.unwrap();
    assert_eq!(resp.status(), 202);
    match s.wait_done(&d.id).await.state {
        SessionState::Done { elapsed_ms, .. } => elapsed_ms,
        other => panic!("{other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn a_client_that_never_reads_does_not_slow_the_episode() {
    let config = GatewayConfig {
        stream_buffer: 16,
        ..Default::default()
    };
    let s = start_server(Arc::new(Idle), config).await;
    let alone = wall_run(&s, false).await;
    let stalled = wall_run(&s, true).await;
    let change = (stalled - alone).abs() / alone;
    println!("no client {alone:.1} ms, silent client {stalled:.1} ms ({:.2}%)", change * 100.0);
    assert!(alone >= 1000.0);
    assert!(change < 0.05, "{change}");
}

/// Compares against `tests/golden/<name>`; `GTA_BLESS=1` rewrites the file
/// after an intended protocol change.
fn golden(name: &str, got: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("GTA_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, got).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden transcript missing; run with GTA_BLESS=1");
    assert_eq!(got, want, "{name}");
}

/// A six-tick session with one click, as the client receives it.
#[tokio::test(flavor = "multi_thread")]
async fn short_session_matches_the_golden_transcript() {
    let s = start_server(expert(), GatewayConfig::default()).await;
    let runtime = RuntimeConfig {
        chunk_stride: Some(1),
        max_fast_ticks: 6,
        ..Default::default()
    };
    let d = s.create_ok(&sim_request("single_target", 0, runtime)).await;
    assert_eq!(d.id, "s000001");
    let mut ws = s.connect(&d.id).await;
    send(&mut ws, &WireMessage::Guidance { event: click(0.42, 0.35, 2) }).await;
    send(&mut ws, &WireMessage::Start).await;
    let got: String = until_result(&mut ws).await.iter().map(Envelope::to_line).collect();
    golden("session.ndjson", &got);
}

/// Rejected client messages on a one-tick session.
#[tokio::test(flavor = "multi_thread")]
async fn refusals_match_the_golden_transcript() {
    let s = start_server(expert(), GatewayConfig::default()).await;
    let d = s.create_ok(&sim_request("single_target", 0, idle_runtime(1))).await;
    let mut ws = s.connect(&d.id).await;
    let mut got = next(&mut ws).await.to_line();
    let bad = GuidanceEvent::mid_episode(
        SpatialPrior::bbox(ImageBox::new(0.6, 0.2, 0.4, 0.5)),
        GuidanceSource::User,
        0,
    );
    send(&mut ws, &WireMessage::Guidance { event: bad }).await;
    got += &next(&mut ws).await.to_line();
    ws.send(Message::Text(r#"{"type":"hello","protocol":1}"#.into())).await.unwrap();
    got += &next(&mut ws).await.to_line();
    send(&mut ws, &WireMessage::Start).await;
    got.extend(until_result(&mut ws).await.iter().map(Envelope::to_line));
    send(&mut ws, &WireMessage::Guidance { event: click(0.5, 0.5, 0) }).await;
    got += &next(&mut ws).await.to_line();
    golden("refusals.ndjson", &got);
}
