//! Live session endpoint. One task owns the [`SessionEngine`] and paces it
//! against the wall clock; connection tasks decode frames and funnel them
//! into a single ordered queue. Clients attach over newline-delimited JSON
//! on TCP or over WebSocket (`/ws`, one JSON message per text frame) on the
//! HTTP port, which also serves the browser console under `/console`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::protocol::log::{Manifest, SessionLog};
use crate::protocol::message::{decode, encode, Command, Message, MsgType, Role, SeqTracker};
use crate::protocol::session::{EndReason, Input, SessionEngine};

/// Per-client telemetry queue depth; a slower client loses telemetry.
pub const TELEMETRY_QUEUE: usize = 64;
/// Simulation steps are batched to this wall-clock interval.
const PACE: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: std::net::IpAddr,
    pub tcp_port: u16,
    pub http_port: u16,
    pub seed: u64,
    /// Session log directory; nothing is persisted when absent.
    pub log_dir: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
}

impl ServeOptions {
    pub fn local(cfg: &Config) -> Self {
        Self {
            bind: [127, 0, 0, 1].into(),
            tcp_port: 0,
            http_port: 0,
            seed: cfg.sim.seed,
            log_dir: None,
            time_scale: 1.0,
        }
    }
}

type ClientId = u64;

enum Inbound {
    Connected {
        id: ClientId,
        reliable: mpsc::UnboundedSender<String>,
        telemetry: mpsc::Sender<String>,
    },
    Frame(ClientId, String),
    Closed(ClientId),
}

struct Client {
    role: Role,
    seq: SeqTracker,
    reliable: mpsc::UnboundedSender<String>,
    telemetry: mpsc::Sender<String>,
}

pub struct RunningServer {
    pub tcp_addr: SocketAddr,
    pub http_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<Value>>,
}

impl RunningServer {
    /// Stop the session and return its summary.
    pub async fn stop(mut self) -> Result<Value> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(|e| Error::Protocol(e.to_string()))?
    }

    /// Wait for the session to end on its own (workflow finished).
    pub async fn wait(self) -> Result<Value> {
        let RunningServer { shutdown, task, .. } = self;
        let r = task.await.map_err(|e| Error::Protocol(e.to_string()))?;
        drop(shutdown);
        r
    }
}

#[derive(Clone)]
struct HttpState {
    inbound: mpsc::UnboundedSender<Inbound>,
    ids: std::sync::Arc<std::sync::atomic::AtomicU64>,
}

impl HttpState {
    fn next_id(&self) -> ClientId {
        self.ids.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    }
}

/// Bind both listeners and start the session.
pub async fn start(cfg: Config, opts: ServeOptions) -> Result<RunningServer> {
    let mut engine = SessionEngine::new(cfg.clone(), opts.seed)?;
    engine.stream_frames = true;
    let log = match &opts.log_dir {
        Some(dir) => Some(SessionLog::create(dir, &Manifest::new(cfg.clone(), opts.seed, Some("live".into())))?),
        None => None,
    };
    let tcp = TcpListener::bind((opts.bind, opts.tcp_port)).await?;
    let http = TcpListener::bind((opts.bind, opts.http_port)).await?;
    let (tcp_addr, http_addr) = (tcp.local_addr()?, http.local_addr()?);
    let (tx, rx) = mpsc::unbounded_channel();
    let (stop_tx, stop_rx) = oneshot::channel();

    let state = HttpState {
        inbound: tx.clone(),
        ids: std::sync::Arc::new(std::sync::atomic::AtomicU64::new(1)),
    };
    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .nest_service("/console", ServeDir::new(&cfg.session.console_dir))
        .with_state(state.clone());
    let http_task = tokio::spawn(async move {
        let _ = axum::serve(http, app).await;
    });
    let tcp_task = tokio::spawn(accept_tcp(tcp, state));

    let task = tokio::spawn(async move {
        let r = run_engine(engine, log, rx, stop_rx, opts.time_scale).await;
        http_task.abort();
        tcp_task.abort();
        r
    });
    tracing::info!(%tcp_addr, %http_addr, "session listening");
    Ok(RunningServer {
        tcp_addr,
        http_addr,
        shutdown: Some(stop_tx),
        task,
    })
}

/// Serve until the workflow ends or the process is interrupted.
pub async fn serve(cfg: Config, opts: ServeOptions) -> Result<Value> {
    let server = start(cfg, opts).await?;
    println!("ndjson tcp  {}", server.tcp_addr);
    println!("websocket   ws://{}/ws", server.http_addr);
    println!("console     http://{}/console/", server.http_addr);
    let RunningServer { shutdown, task, .. } = server;
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            if let Some(tx) = shutdown {
                let _ = tx.send(());
            }
        } else {
            // keep the sender alive so the session is not stopped
            std::future::pending::<()>().await;
        }
    });
    task.await.map_err(|e| Error::Protocol(e.to_string()))?
}

async fn accept_tcp(listener: TcpListener, state: HttpState) {
    while let Ok((stream, _)) = listener.accept().await {
        let id = state.next_id();
        tokio::spawn(tcp_client(stream, id, state.inbound.clone()));
    }
}

fn register(id: ClientId, inbound: &mpsc::UnboundedSender<Inbound>) -> (mpsc::UnboundedReceiver<String>, mpsc::Receiver<String>) {
    let (reliable, rel_rx) = mpsc::unbounded_channel();
    let (telemetry, tel_rx) = mpsc::channel(TELEMETRY_QUEUE);
    let _ = inbound.send(Inbound::Connected { id, reliable, telemetry });
    (rel_rx, tel_rx)
}

/// Next outbound line, preferring reliable traffic.
async fn next_out(rel: &mut mpsc::UnboundedReceiver<String>, tel: &mut mpsc::Receiver<String>) -> Option<String> {
    tokio::select! {
        biased;
        m = rel.recv() => m,
        m = tel.recv() => m,
    }
}

async fn tcp_client(stream: TcpStream, id: ClientId, inbound: mpsc::UnboundedSender<Inbound>) {
    let (read, mut write) = stream.into_split();
    let (mut rel, mut tel) = register(id, &inbound);
    let writer = tokio::spawn(async move {
        while let Some(line) = next_out(&mut rel, &mut tel).await {
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut lines = BufReader::new(read).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if inbound.send(Inbound::Frame(id, line)).is_err() {
            break;
        }
    }
    let _ = inbound.send(Inbound::Closed(id));
    writer.abort();
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<HttpState>) -> Response {
    let id = state.next_id();
    ws.on_upgrade(move |socket| ws_client(socket, id, state.inbound))
}

async fn ws_client(socket: WebSocket, id: ClientId, inbound: mpsc::UnboundedSender<Inbound>) {
    let (mut sink, mut stream) = socket.split();
    let (mut rel, mut tel) = register(id, &inbound);
    let writer = tokio::spawn(async move {
        while let Some(line) = next_out(&mut rel, &mut tel).await {
            let text = line.trim_end().to_string();
            if sink.send(WsMessage::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            WsMessage::Text(t) => t.to_string(),
            WsMessage::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            WsMessage::Close(_) => break,
            _ => continue,
        };
        if inbound.send(Inbound::Frame(id, text)).is_err() {
            break;
        }
    }
    let _ = inbound.send(Inbound::Closed(id));
    writer.abort();
}

struct Hub {
    clients: HashMap<ClientId, Client>,
    operator: Option<ClientId>,
}

impl Hub {
    fn error(&mut self, engine: &mut SessionEngine, id: ClientId, code: &str, message: String) {
        let m = engine.reply(MsgType::Error, json!({ "code": code, "message": message }));
        if let (Some(c), Ok(line)) = (self.clients.get(&id), encode(&m)) {
            let _ = c.reliable.send(line);
        }
    }

    fn broadcast(&mut self, msgs: Vec<Message>) {
        for m in msgs {
            let Ok(line) = encode(&m) else { continue };
            for c in self.clients.values() {
                if m.kind == MsgType::Telemetry {
                    let _ = c.telemetry.try_send(line.clone());
                } else {
                    let _ = c.reliable.send(line.clone());
                }
            }
        }
    }
}

fn handle(hub: &mut Hub, engine: &mut SessionEngine, event: Inbound) {
    match event {
        Inbound::Connected { id, reliable, telemetry } => {
            hub.clients.insert(
                id,
                Client {
                    role: Role::Observer,
                    seq: SeqTracker::default(),
                    reliable,
                    telemetry,
                },
            );
        }
        Inbound::Closed(id) => {
            hub.clients.remove(&id);
            if hub.operator == Some(id) {
                hub.operator = None;
                let _ = engine.apply(Input::OperatorDisconnected);
            }
        }
        Inbound::Frame(id, line) => {
            if line.trim().is_empty() {
                return;
            }
            let msg = match decode(&line) {
                Ok(m) => m,
                Err(e) => return hub.error(engine, id, e.code(), e.to_string()),
            };
            let Some(client) = hub.clients.get_mut(&id) else { return };
            if let Err(e) = client.seq.accept(msg.seq) {
                return hub.error(engine, id, "bad_seq", e.to_string());
            }
            let cmd = match Command::from_message(&msg) {
                Ok(c) => c,
                Err(e) => return hub.error(engine, id, "rejected", e.to_string()),
            };
            if let Command::Hello { role } = cmd {
                match role {
                    Role::Operator if hub.operator.is_none() || hub.operator == Some(id) => {
                        client.role = Role::Operator;
                        hub.operator = Some(id);
                    }
                    Role::Operator => {
                        client.role = Role::Observer;
                        hub.error(engine, id, "operator_taken", "an operator is already connected; joined as observer".into());
                    }
                    Role::Observer => {
                        client.role = Role::Observer;
                        if hub.operator == Some(id) {
                            hub.operator = None;
                        }
                    }
                }
                return;
            }
            if client.role != Role::Operator && cmd.needs_operator() {
                return hub.error(engine, id, "not_operator", format!("{} needs the operator role", msg.kind.as_str()));
            }
            if engine.workflow.updated_at == Some(engine.t_s()) {
                // workflow times strictly increase; a same-tick event waits one tick
                engine.step();
            }
            if let Err(e) = engine.apply(Input::Command(msg)) {
                hub.error(engine, id, "rejected", e.to_string());
            }
        }
    }
}

async fn run_engine(
    mut engine: SessionEngine,
    mut log: Option<SessionLog>,
    mut rx: mpsc::UnboundedReceiver<Inbound>,
    mut stop: oneshot::Receiver<()>,
    time_scale: f64,
) -> Result<Value> {
    let mut hub = Hub {
        clients: HashMap::new(),
        operator: None,
    };
    let start = tokio::time::Instant::now();
    let dt = engine.sim.dt_s;
    let mut ticker = tokio::time::interval(PACE);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let reason = loop {
        tokio::select! {
            _ = &mut stop => break EndReason::Stopped,
            _ = ticker.tick() => {}
        }
        while let Ok(ev) = rx.try_recv() {
            handle(&mut hub, &mut engine, ev);
        }
        let target = (start.elapsed().as_secs_f64() * time_scale / dt) as u64;
        while engine.tick() < target && !engine.is_over() {
            engine.step();
        }
        hub.broadcast(engine.take_outbox());
        if let Some(l) = log.as_mut() {
            l.write(engine.take_log())?;
        } else {
            engine.take_log();
        }
        if engine.is_over() {
            break if engine.workflow.phase == crate::workflow::Phase::Complete {
                EndReason::Complete
            } else {
                EndReason::Aborted
            };
        }
    };
    let summary = engine.finish(reason);
    hub.broadcast(engine.take_outbox());
    if let Some(mut l) = log {
        l.write(engine.take_log())?;
        l.finish(&summary)?;
    }
    // let writers flush the final messages
    tokio::time::sleep(Duration::from_millis(50)).await;
    Ok(summary)
}
