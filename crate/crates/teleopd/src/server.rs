//! HTTP and WebSocket front end. Each connection owns one session loop;
//! the loop talks to the socket only through bounded channels.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use iroco_core::denkf::EnsembleModels;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc};
use tokio::time::MissedTickBehavior;

use crate::protocol::{parse_client, ClientMessage, ServerMessage};
use crate::session::{Session, SessionConfig};

/// Outgoing frames buffered per client before the oldest are dropped.
pub const FRAME_BUFFER: usize = 8;
/// Incoming control messages buffered before the reader waits.
pub const CONTROL_BUFFER: usize = 32;

pub struct AppState<M> {
    models: Arc<M>,
    cfg: SessionConfig,
    issued: Mutex<HashSet<String>>,
    counter: AtomicU64,
}

impl<M> AppState<M> {
    pub fn new(models: Arc<M>, cfg: SessionConfig) -> Arc<Self> {
        Arc::new(Self {
            models,
            cfg,
            issued: Mutex::new(HashSet::new()),
            counter: AtomicU64::new(0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub id: String,
    pub ws_url: String,
}

pub fn router<M>(state: Arc<AppState<M>>) -> Router
where
    M: EnsembleModels + Send + Sync + 'static,
{
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/session/new", get(new_session::<M>))
        .route("/ws/{id}", get(connect::<M>))
        .with_state(state)
}

pub async fn serve<M>(listener: tokio::net::TcpListener, state: Arc<AppState<M>>) -> std::io::Result<()>
where
    M: EnsembleModels + Send + Sync + 'static,
{
    axum::serve(listener, router(state)).await
}

async fn new_session<M>(State(state): State<Arc<AppState<M>>>, headers: HeaderMap) -> Json<NewSession> {
    let n = state.counter.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n:06}");
    state.issued.lock().expect("session registry").insert(id.clone());
    let host = headers.get("host").and_then(|h| h.to_str().ok());
    let ws_url = match host {
        Some(h) => format!("ws://{h}/ws/{id}"),
        None => format!("/ws/{id}"),
    };
    Json(NewSession { id, ws_url })
}

async fn connect<M>(
    State(state): State<Arc<AppState<M>>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Response
where
    M: EnsembleModels + Send + Sync + 'static,
{
    if !state.issued.lock().expect("session registry").remove(&id) {
        return (StatusCode::NOT_FOUND, "unknown or already connected session").into_response();
    }
    let n: u64 = id.trim_start_matches('s').parse().unwrap_or(0);
    let cfg = SessionConfig {
        seed: state.cfg.seed.wrapping_add(n),
        ..state.cfg.clone()
    };
    match Session::open(id, state.models.clone(), cfg) {
        Ok(session) => ws.on_upgrade(move |socket| run_connection(socket, session)),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn run_connection<M>(socket: WebSocket, session: Session<M>)
where
    M: EnsembleModels + Send + Sync + 'static,
{
    let id = session.id().to_string();
    log::info!("session {id} connected");
    let (mut sink, mut stream) = socket.split();
    let (control_tx, control_rx) = mpsc::channel::<ClientMessage>(CONTROL_BUFFER);
    let (frames_tx, mut frames_rx) = broadcast::channel::<ServerMessage>(FRAME_BUFFER);

    let ticker = tokio::spawn(session_loop(session, control_rx, frames_tx.clone()));

    let writer = tokio::spawn(async move {
        loop {
            match frames_rx.recv().await {
                Ok(msg) => {
                    if sink.send(Message::Text(msg.to_json().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("dropped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => match parse_client(text.as_str()) {
                Ok(m) => {
                    if control_tx.send(m).await.is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = frames_tx.send(ServerMessage::error(e));
                }
            },
            Message::Binary(_) => {
                let _ = frames_tx.send(ServerMessage::error("binary frames are not supported"));
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    drop(control_tx);
    drop(frames_tx);
    let _ = ticker.await;
    writer.abort();
    log::info!("session {id} closed");
}

async fn session_loop<M: EnsembleModels>(
    mut session: Session<M>,
    mut control: mpsc::Receiver<ClientMessage>,
    frames: broadcast::Sender<ServerMessage>,
) {
    let period = Duration::from_secs_f64(1.0 / session.config().rate);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut last: Option<Instant> = None;
    let mut hz = session.config().rate;
    loop {
        interval.tick().await;
        loop {
            match control.try_recv() {
                Ok(ClientMessage::Steer(ev)) => {
                    if let Err(e) = session.steer(&ev) {
                        let _ = frames.send(ServerMessage::error(e.to_string()));
                    }
                }
                Ok(ClientMessage::Recalibrate) => session.recalibrate(),
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        let now = Instant::now();
        if let Some(prev) = last {
            let dt = now.duration_since(prev).as_secs_f64();
            if dt > 0.0 {
                hz = 0.9 * hz + 0.1 / dt;
            }
        }
        last = Some(now);
        let msg = match session.tick() {
            Ok(mut frame) => {
                frame.hz = hz;
                ServerMessage::State(frame)
            }
            Err(e) => ServerMessage::error(format!("tick failed: {e}")),
        };
        let _ = frames.send(msg);
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn run<M>(addr: SocketAddr, models: Arc<M>, cfg: SessionConfig) -> std::io::Result<()>
where
    M: EnsembleModels + Send + Sync + 'static,
{
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve(listener, AppState::new(models, cfg)).await
}
