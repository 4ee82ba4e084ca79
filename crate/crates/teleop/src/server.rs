//! WebSocket front end and the tick loop.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State as AxumState;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use sari_core::sari::SariModel;
use sari_core::sim::world;
use sari_core::types::Dataset;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::protocol::{ClientMsg, Frame, ServerMsg};
use crate::session::{RetrainJob, Session, SessionConfig, DATASET_FILE};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub world: String,
    pub model: Option<PathBuf>,
    pub fresh: bool,
    pub hz: f64,
    pub data_dir: Option<PathBuf>,
    pub session: SessionConfig,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8765)),
            world: "drawer".into(),
            model: None,
            fresh: false,
            hz: 10.0,
            data_dir: None,
            session: SessionConfig::default(),
        }
    }
}

/// Builds the session a config describes: the checkpoint and, unless
/// `fresh`, the dataset already stored in `data_dir`.
pub fn load_session(cfg: &ServeConfig) -> Result<Session> {
    if cfg.model.is_none() && !cfg.fresh {
        bail!("either a model checkpoint or --fresh is required");
    }
    let w = world(&cfg.world, 0)?;
    let model = match &cfg.model {
        Some(p) if !cfg.fresh => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(SariModel::from_json(&text).with_context(|| format!("loading {}", p.display()))?)
        }
        _ => None,
    };
    let mut dataset = Vec::new();
    if let (Some(dir), false) = (&cfg.data_dir, cfg.fresh) {
        let path = dir.join(DATASET_FILE);
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            dataset = Dataset::from_jsonl(&text)?.interactions().to_vec();
        }
    }
    Session::new(w, model, dataset, cfg.session.clone())
}

enum Inbound {
    Connected { id: u64, tx: mpsc::UnboundedSender<ServerMsg> },
    Text { id: u64, text: String },
    Disconnected { id: u64 },
}

#[derive(Clone)]
struct AppState {
    inbound: mpsc::UnboundedSender<Inbound>,
    next_id: Arc<AtomicU64>,
}

/// A running service.
pub struct Service {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    ticker: JoinHandle<()>,
    http: JoinHandle<()>,
}

impl Service {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.ticker).await;
        self.http.abort();
    }

    /// Waits until the tick loop stops.
    pub async fn wait(self) {
        let _ = self.ticker.await;
    }
}

/// Binds the listener and starts the tick loop.
pub async fn serve(cfg: ServeConfig) -> Result<Service> {
    if !(cfg.hz > 0.0 && cfg.hz.is_finite()) {
        bail!("hz must be positive");
    }
    let session = load_session(&cfg)?;
    let listener = TcpListener::bind(cfg.addr).await.with_context(|| format!("binding {}", cfg.addr))?;
    let addr = listener.local_addr()?;
    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let state = AppState { inbound: in_tx, next_id: Arc::new(AtomicU64::new(0)) };
    let app = Router::new().route("/ws", get(upgrade)).with_state(state);
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("http server stopped: {e}");
        }
    });
    let (stop_tx, stop_rx) = oneshot::channel();
    let period = Duration::from_secs_f64(1.0 / cfg.hz);
    let ticker = tokio::spawn(tick_loop(session, period, cfg.data_dir.clone(), in_rx, stop_rx));
    tracing::info!("serving world {} on ws://{addr}/ws", cfg.world);
    Ok(Service { addr, shutdown: Some(stop_tx), ticker, http })
}

async fn upgrade(ws: WebSocketUpgrade, AxumState(state): AxumState<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<ServerMsg>();
    if state.inbound.send(Inbound::Connected { id, tx: out_tx }).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        let mut seq = 0u64;
        while let Some(msg) = out_rx.recv().await {
            let text = serde_json::to_string(&Frame { seq, msg }).expect("frames serialize");
            seq += 1;
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(_) => "binary frames are not supported".into(),
            Message::Close(_) => break,
            _ => continue,
        };
        if state.inbound.send(Inbound::Text { id, text }).is_err() {
            break;
        }
    }
    let _ = state.inbound.send(Inbound::Disconnected { id });
    writer.abort();
}

struct Clients {
    peers: BTreeMap<u64, mpsc::UnboundedSender<ServerMsg>>,
    operator: Option<u64>,
}

impl Clients {
    fn send(&self, id: u64, msg: ServerMsg) {
        if let Some(tx) = self.peers.get(&id) {
            let _ = tx.send(msg);
        }
    }

    fn broadcast(&self, msg: &ServerMsg) {
        for tx in self.peers.values() {
            let _ = tx.send(msg.clone());
        }
    }
}

async fn tick_loop(
    mut session: Session,
    period: Duration,
    data_dir: Option<PathBuf>,
    mut inbound: mpsc::UnboundedReceiver<Inbound>,
    mut stop: oneshot::Receiver<()>,
) {
    let mut clients = Clients { peers: BTreeMap::new(), operator: None };
    let (done_tx, mut done_rx) = mpsc::unbounded_channel::<(u64, Result<SariModel>)>();
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = &mut stop => break,
            _ = interval.tick() => match session.tick() {
                Ok(frame) => clients.broadcast(&ServerMsg::State(frame)),
                Err(e) => clients.broadcast(&ServerMsg::error(format!("tick failed: {e}"))),
            },
            Some((id, result)) = done_rx.recv() => {
                let msg = session.finish_retrain(id, result);
                clients.broadcast(&msg);
            }
            Some(ev) = inbound.recv() => match ev {
                Inbound::Connected { id, tx } => {
                    let _ = tx.send(session.world_msg());
                    clients.peers.insert(id, tx);
                    clients.operator.get_or_insert(id);
                }
                Inbound::Disconnected { id } => {
                    clients.peers.remove(&id);
                    if clients.operator == Some(id) {
                        clients.operator = clients.peers.keys().next().copied();
                    }
                }
                Inbound::Text { id, text } => {
                    if clients.operator != Some(id) {
                        clients.send(id, ServerMsg::error("spectators are read-only"));
                        continue;
                    }
                    let msg = match serde_json::from_str::<ClientMsg>(&text) {
                        Ok(m) => m,
                        Err(e) => {
                            clients.send(id, ServerMsg::error(format!("malformed message: {e}")));
                            continue;
                        }
                    };
                    match session.handle(msg) {
                        Ok(None) => {}
                        Ok(Some(job)) => spawn_retrain(job, data_dir.clone(), done_tx.clone()),
                        Err(e) => clients.send(id, ServerMsg::error(e)),
                    }
                }
            },
        }
    }
}

fn spawn_retrain(job: RetrainJob, data_dir: Option<PathBuf>, done: mpsc::UnboundedSender<(u64, Result<SariModel>)>) {
    let id = job.model_id;
    tokio::task::spawn_blocking(move || {
        let result = job.run(data_dir.as_deref());
        let _ = done.send((id, result));
    });
}
