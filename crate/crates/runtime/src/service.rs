//! HTTP surface of a running simulation.
//!
//! | method | path          | body / result                                  |
//! |--------|---------------|------------------------------------------------|
//! | POST   | `/v1/intent`  | `{"text": …}` → [`IntentAccepted`] or [`ApiError`] |
//! | GET    | `/v1/state`   | latest [`StateResponse`]                       |
//! | GET    | `/v1/record`  | the [`RunRecord`] so far                        |
//! | GET    | `/v1/events`  | server-sent [`Event`]s, `event:` is the `type` |
//!
//! Every payload carries a `schema` field naming its version.

use std::convert::Infallible;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cellfree_core::agents::{IntentBackend, LoopSnapshot, Message, ObjectiveSpec};
use cellfree_core::Error as CoreError;
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::Result;
use crate::record::RunRecord;
use crate::run::Simulation;

pub const EVENT_SCHEMA: &str = "cellfree.event.v1";
pub const API_SCHEMA: &str = "cellfree.api.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    Message { message: Message },
    Snapshot { snapshot: LoopSnapshot },
}

/// One stream record. Per loop, the agent messages come first, then the
/// snapshot that closes the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema: String,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    fn new(body: EventBody) -> Self {
        Self { schema: EVENT_SCHEMA.into(), body }
    }

    pub fn kind(&self) -> &'static str {
        match self.body {
            EventBody::Message { .. } => "message",
            EventBody::Snapshot { .. } => "snapshot",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct IntentRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentAccepted {
    pub schema: String,
    pub spec: ObjectiveSpec,
    pub backend: String,
    pub fallback: Option<String>,
    /// Earliest loop the intent can take effect in.
    pub earliest_loop: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub schema: String,
    pub error: String,
    pub diagnosis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub schema: String,
    pub snapshot: LoopSnapshot,
}

type Queued = (String, ObjectiveSpec);

/// State shared between the HTTP handlers and the loop driver.
pub struct Shared {
    latest: RwLock<Arc<LoopSnapshot>>,
    record: RwLock<RunRecord>,
    events: broadcast::Sender<Event>,
    intents: Mutex<Sender<Queued>>,
    backend: Arc<dyn IntentBackend>,
    num_users: usize,
}

impl Shared {
    pub fn latest(&self) -> Arc<LoopSnapshot> {
        self.latest.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn record(&self) -> RunRecord {
        self.record.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }
}

/// Sole writer of the simulation. Drains queued intents at each loop
/// boundary, steps, then publishes the snapshot and its messages.
pub struct Driver {
    sim: Simulation,
    inbox: Receiver<Queued>,
    shared: Arc<Shared>,
}

impl Driver {
    pub fn tick(&mut self) -> Result<LoopSnapshot> {
        while let Ok((text, spec)) = self.inbox.try_recv() {
            self.sim.enqueue_objective(&text, spec)?;
        }
        let t0 = Instant::now();
        let snap = self.sim.step()?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        self.shared.record.write().unwrap_or_else(|p| p.into_inner()).push(snap.clone(), ms)?;
        *self.shared.latest.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(snap.clone());
        for m in &snap.messages {
            // no subscribers is fine
            let _ = self.shared.events.send(Event::new(EventBody::Message { message: m.clone() }));
        }
        let _ = self.shared.events.send(Event::new(EventBody::Snapshot { snapshot: snap.clone() }));
        Ok(snap)
    }

    /// Runs `loops` loops (forever when `None`), sleeping `period` between them.
    pub fn run(&mut self, loops: Option<u64>, period: Duration) -> Result<()> {
        let mut done = 0;
        while loops.is_none_or(|n| done < n) {
            let t0 = Instant::now();
            self.tick()?;
            done += 1;
            if let Some(rest) = period.checked_sub(t0.elapsed()) {
                std::thread::sleep(rest);
            }
        }
        Ok(())
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }
}

/// Builds the router and the driver that feeds it.
pub fn serve(sim: Simulation, record: RunRecord, backend: Arc<dyn IntentBackend>) -> (Router, Driver) {
    let (tx, rx) = mpsc::channel();
    let (events, _) = broadcast::channel(4096);
    let shared = Arc::new(Shared {
        latest: RwLock::new(Arc::new(sim.snapshot().clone())),
        num_users: record.num_users,
        record: RwLock::new(record),
        events,
        intents: Mutex::new(tx),
        backend,
    });
    let router = Router::new()
        .route("/v1/intent", post(submit_intent))
        .route("/v1/state", get(get_state))
        .route("/v1/record", get(get_record))
        .route("/v1/events", get(stream_events))
        .with_state(shared.clone());
    (router, Driver { sim, inbox: rx, shared })
}

fn api_error(status: StatusCode, error: &str, diagnosis: String) -> Response {
    (status, Json(ApiError { schema: API_SCHEMA.into(), error: error.into(), diagnosis })).into_response()
}

async fn submit_intent(State(s): State<Arc<Shared>>, Json(req): Json<IntentRequest>) -> Response {
    let backend = s.backend.clone();
    let k = s.num_users;
    let text = req.text.clone();
    let tr = match tokio::task::spawn_blocking(move || backend.translate(&text, k)).await {
        Ok(r) => r,
        Err(e) => return api_error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    match tr {
        Ok(tr) => {
            let sent = s.intents.lock().unwrap_or_else(|p| p.into_inner()).send((req.text, tr.spec.clone()));
            if sent.is_err() {
                return api_error(StatusCode::SERVICE_UNAVAILABLE, "stopped", "the simulation loop has stopped".into());
            }
            let body = IntentAccepted {
                schema: API_SCHEMA.into(),
                spec: tr.spec,
                backend: tr.backend,
                fallback: tr.fallback,
                earliest_loop: s.latest().loop_index + 1,
            };
            (StatusCode::ACCEPTED, Json(body)).into_response()
        }
        Err(CoreError::IntentRejected(d)) => api_error(StatusCode::UNPROCESSABLE_ENTITY, "intent_rejected", d),
        Err(e) => api_error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_intent", e.to_string()),
    }
}

async fn get_state(State(s): State<Arc<Shared>>) -> Json<StateResponse> {
    Json(StateResponse { schema: API_SCHEMA.into(), snapshot: (*s.latest()).clone() })
}

async fn get_record(State(s): State<Arc<Shared>>) -> Json<RunRecord> {
    Json(s.record())
}

async fn stream_events(State(s): State<Arc<Shared>>) -> Sse<impl Stream<Item = std::result::Result<SseEvent, Infallible>>> {
    let rx = s.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let out = SseEvent::default().event(ev.kind()).json_data(&ev).expect("events serialize");
                    return Some((Ok(out), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(target: "service", skipped = n, "event subscriber lagged");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
