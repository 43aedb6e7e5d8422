use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use wallhack_core::csi::{CsiFrame, SessionMeta};

use crate::protocol::{parse_client_message, ClientMessage, Command, ServerBody, ServerMessage, WS_PATH};
use crate::recorder::{Recorder, RecorderError};
use crate::source::MonitorSource;
use crate::state::TelemetryState;
use crate::MonitorError;

const PLACEHOLDER_INDEX: &str =
    "<!doctype html>\n<title>wallhack monitor</title>\n<p>Telemetry websocket at <code>/ws</code>.</p>\n";

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub bind: SocketAddr,
    /// Directory of dashboard assets served at `/`; a placeholder page when `None`.
    pub assets_dir: Option<PathBuf>,
    pub recordings_dir: PathBuf,
    /// Amplitude rows carried by each snapshot.
    pub columns: usize,
    pub snapshot_hz: f64,
    pub stale_after: Duration,
    /// Comment lines at the top of each recorded session file.
    pub header: Vec<String>,
    /// Context written into each recording's header, start time replaced.
    pub session_meta: Option<SessionMeta>,
}

impl MonitorConfig {
    pub fn new(bind: SocketAddr, recordings_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind,
            assets_dir: None,
            recordings_dir: recordings_dir.into(),
            columns: 200,
            snapshot_hz: 10.0,
            stale_after: Duration::from_secs(2),
            header: Vec::new(),
            session_meta: None,
        }
    }

    fn validate(&self) -> Result<(), MonitorError> {
        if !(self.snapshot_hz.is_finite() && self.snapshot_hz > 0.0) {
            return Err(MonitorError::InvalidConfig(format!(
                "snapshot rate {} Hz",
                self.snapshot_hz
            )));
        }
        if self.stale_after.is_zero() {
            return Err(MonitorError::InvalidConfig("stale timeout must be positive".into()));
        }
        if let Some(dir) = &self.assets_dir {
            if !dir.is_dir() {
                return Err(MonitorError::InvalidConfig(format!(
                    "assets directory {} not found",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}

type Request = (ClientMessage, oneshot::Sender<ServerMessage>);

#[derive(Clone)]
struct Hub {
    snapshots: watch::Receiver<Arc<str>>,
    control: mpsc::Sender<Request>,
    shutdown: watch::Receiver<bool>,
}

/// A running monitor. Dropping it leaves the service running.
pub struct MonitorHandle {
    local_addr: SocketAddr,
    udp_addr: Option<SocketAddr>,
    shutdown: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    ingest: JoinHandle<()>,
}

impl MonitorHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Bound address of a UDP source.
    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp_addr
    }

    /// Finishes any active recording, closes subscriber connections and
    /// waits for the service to stop.
    pub async fn shutdown(self) -> Result<(), MonitorError> {
        let _ = self.shutdown.send(true);
        let ingest = self.ingest.await;
        let server = self.server.await;
        ingest.map_err(|e| MonitorError::Internal(e.to_string()))?;
        server
            .map_err(|e| MonitorError::Internal(e.to_string()))?
            .map_err(MonitorError::Serve)
    }
}

async fn stopped(shutdown: &mut watch::Receiver<bool>) {
    let _ = shutdown.wait_for(|s| *s).await;
}

fn unix_now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

/// Binds `cfg.bind`, starts `source` and serves telemetry until shut down.
pub async fn serve(cfg: MonitorConfig, source: MonitorSource) -> Result<MonitorHandle, MonitorError> {
    cfg.validate()?;
    let listener = TcpListener::bind(cfg.bind)
        .await
        .map_err(|source| MonitorError::Bind { addr: cfg.bind, source })?;
    let local_addr = listener
        .local_addr()
        .map_err(|source| MonitorError::Bind { addr: cfg.bind, source })?;
    let started = source.start().await?;

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let (snapshot_tx, snapshot_rx) = watch::channel::<Arc<str>>(Arc::from(""));
    let (control_tx, control_rx) = mpsc::channel(64);

    let ingest = Ingest {
        state: TelemetryState::new(cfg.columns),
        recorder: Recorder::new(&cfg.recordings_dir, cfg.header.clone(), cfg.session_meta.clone()),
        stale_after: cfg.stale_after,
        seq: 0,
    };
    let period = Duration::from_secs_f64(1.0 / cfg.snapshot_hz);
    let ingest = tokio::spawn(ingest.run(started.frames, control_rx, snapshot_tx, period, shutdown_rx.clone()));

    let hub = Hub {
        snapshots: snapshot_rx,
        control: control_tx,
        shutdown: shutdown_rx.clone(),
    };
    let router = Router::new().route(WS_PATH, get(ws_upgrade)).with_state(hub);
    let router = match &cfg.assets_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    };
    let mut stop = shutdown_rx;
    let server = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                stopped(&mut stop).await;
            })
            .await
    });
    tracing::info!(%local_addr, "monitor listening");
    Ok(MonitorHandle {
        local_addr,
        udp_addr: started.udp_addr,
        shutdown: shutdown_tx,
        server,
        ingest,
    })
}

struct Ingest {
    state: TelemetryState,
    recorder: Recorder,
    stale_after: Duration,
    seq: u64,
}

impl Ingest {
    async fn run(
        mut self,
        mut frames: mpsc::Receiver<CsiFrame>,
        mut control: mpsc::Receiver<Request>,
        snapshots: watch::Sender<Arc<str>>,
        period: Duration,
        mut shutdown: watch::Receiver<bool>,
    ) {
        let mut tick = tokio::time::interval(period);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let mut source_open = true;
        loop {
            tokio::select! {
                () = stopped(&mut shutdown) => break,
                Some((msg, reply)) = control.recv() => {
                    let _ = reply.send(self.handle(msg));
                }
                frame = frames.recv(), if source_open => match frame {
                    Some(frame) => self.ingest(&frame),
                    None => {
                        tracing::warn!("frame source ended");
                        source_open = false;
                    }
                },
                _ = tick.tick() => {
                    snapshots.send_replace(self.snapshot_json().into());
                }
            }
        }
        if self.recorder.is_recording() {
            match self.recorder.stop() {
                Ok(closed) => tracing::info!(files = ?closed.files, "recording finished at shutdown"),
                Err(e) => tracing::error!("finishing recording: {e}"),
            }
        }
    }

    fn ingest(&mut self, frame: &CsiFrame) {
        self.state.push(frame, Instant::now());
        if let Err(e) = self.recorder.record(frame) {
            tracing::error!("recording aborted: {e}");
            let _ = self.recorder.stop();
        }
    }

    fn snapshot_json(&mut self) -> String {
        let snap = self
            .state
            .snapshot(self.seq, Instant::now(), self.stale_after, self.recorder.state());
        self.seq += 1;
        ServerMessage::new(ServerBody::Snapshot(snap)).to_json()
    }

    fn handle(&mut self, msg: ClientMessage) -> ServerMessage {
        let command = msg.command.name();
        let mut warning = None;
        let result = match msg.command {
            Command::StartRecording { label } => match self.recorder.start(label, unix_now_us()) {
                Err(RecorderError::AlreadyRecording(path)) => {
                    warning = Some(format!("already recording to {path}"));
                    Ok(None)
                }
                other => other.map(|()| None),
            },
            Command::StopRecording => match self.recorder.stop() {
                Err(RecorderError::NotRecording) => {
                    warning = Some("not recording".to_string());
                    Ok(None)
                }
                other => other.map(Some),
            },
            Command::MarkInterval { label } => self.recorder.mark_interval(label).map(Some),
        };
        let body = match result {
            Ok(closed) => {
                let (intervals, files) = closed.map(|c| (c.intervals, c.files)).unwrap_or_default();
                ServerBody::Ack {
                    command: command.to_string(),
                    id: msg.id,
                    warning,
                    recording: self.recorder.state(),
                    intervals,
                    files,
                }
            }
            Err(e) => ServerBody::Error {
                command: Some(command.to_string()),
                id: msg.id,
                message: e.to_string(),
            },
        };
        ServerMessage::new(body)
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<Hub>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| subscriber(socket, hub))
}

/// Forwards the newest snapshot whenever it changes; a slow client simply
/// skips the snapshots published while it was busy.
async fn subscriber(mut socket: WebSocket, hub: Hub) {
    let Hub {
        mut snapshots,
        control,
        mut shutdown,
    } = hub;
    snapshots.mark_changed();
    loop {
        let outgoing = tokio::select! {
            () = stopped(&mut shutdown) => {
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
            changed = snapshots.changed() => {
                if changed.is_err() {
                    return;
                }
                let text = snapshots.borrow_and_update().clone();
                if text.is_empty() {
                    continue;
                }
                text.to_string()
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => reply_to(&control, text.as_str()).await.to_json(),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => continue,
            },
        };
        if socket.send(Message::Text(outgoing.into())).await.is_err() {
            return;
        }
    }
}

async fn reply_to(control: &mpsc::Sender<Request>, text: &str) -> ServerMessage {
    let msg = match parse_client_message(text) {
        Ok(msg) => msg,
        Err(reply) => return reply,
    };
    let (command, id) = (msg.command.name(), msg.id);
    let (tx, rx) = oneshot::channel();
    let unavailable = || {
        ServerMessage::new(ServerBody::Error {
            command: Some(command.to_string()),
            id,
            message: "monitor is shutting down".into(),
        })
    };
    if control.send((msg, tx)).await.is_err() {
        return unavailable();
    }
    rx.await.unwrap_or_else(|_| unavailable())
}
