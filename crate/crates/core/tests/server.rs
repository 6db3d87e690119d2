use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message as Ws;

use lus_teleop::frame::frame_from_pgm;
use lus_teleop::protocol::message::{decode, Message, MsgType};
use lus_teleop::protocol::server::{start, RunningServer, ServeOptions};
use lus_teleop::Config;

const WAIT: Duration = Duration::from_secs(20);

async fn server(time_scale: f64, console_dir: Option<&std::path::Path>) -> RunningServer {
    let mut cfg = Config::default();
    if let Some(d) = console_dir {
        cfg.session.console_dir = d.display().to_string();
    }
    let opts = ServeOptions {
        time_scale,
        ..ServeOptions::local(&cfg)
    };
    start(cfg, opts).await.unwrap()
}

struct Client {
    lines: tokio::io::Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
    seq: u64,
}

impl Client {
    async fn connect(s: &RunningServer) -> Client {
        let (r, w) = TcpStream::connect(s.tcp_addr).await.unwrap().into_split();
        Client {
            lines: BufReader::new(r).lines(),
            write: w,
            seq: 0,
        }
    }

    async fn raw(&mut self, line: &str) {
        self.write.write_all(format!("{line}\n").as_bytes()).await.unwrap();
    }

    async fn send(&mut self, kind: &str, payload: Value) {
        self.seq += 1;
        let mut m = json!({ "type": kind, "seq": self.seq, "t_s": 0.0 });
        if payload != Value::Null {
            m["payload"] = payload;
        }
        self.raw(&m.to_string()).await;
    }

    async fn next(&mut self) -> Message {
        let line = timeout(WAIT, self.lines.next_line()).await.unwrap().unwrap().unwrap();
        decode(&line).unwrap()
    }

    /// Skip messages until one satisfies `pred`.
    async fn until(&mut self, pred: impl Fn(&Message) -> bool) -> Message {
        loop {
            let m = self.next().await;
            if pred(&m) {
                return m;
            }
        }
    }
}

fn is_error(m: &Message) -> bool {
    m.kind == MsgType::Error
}

fn event_kind(m: &Message) -> Option<&str> {
    (m.kind == MsgType::Event).then(|| m.get("kind").and_then(Value::as_str)).flatten()
}

#[tokio::test(flavor = "multi_thread")]
async fn jog_is_reflected_in_telemetry() {
    let s = server(1.0, None).await;
    let mut op = Client::connect(&s).await;
    op.send("hello", json!({ "role": "operator" })).await;
    let first = op.until(|m| m.kind == MsgType::Telemetry).await;
    let x0 = first.get("joints").unwrap()["x_mm"].as_f64().unwrap();
    op.send("jog", json!({ "stick_x": 1.0 })).await;
    let moved = op
        .until(|m| m.kind == MsgType::Telemetry && m.get("joints").unwrap()["x_mm"].as_f64().unwrap() > x0)
        .await;
    assert!(moved.t_s > first.t_s);
    s.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn telemetry_times_strictly_increase() {
    let s = server(1.0, None).await;
    let mut c = Client::connect(&s).await;
    let mut last = -1.0;
    for _ in 0..20 {
        let m = c.until(|m| m.kind == MsgType::Telemetry).await;
        assert!(m.t_s > last);
        last = m.t_s;
    }
    s.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn roles_are_enforced() {
    let s = server(1.0, None).await;
    let mut op = Client::connect(&s).await;
    op.send("hello", json!({ "role": "operator" })).await;
    op.until(|m| m.kind == MsgType::Telemetry).await;

    let mut second = Client::connect(&s).await;
    second.send("hello", json!({ "role": "operator" })).await;
    let e = second.until(is_error).await;
    assert_eq!(e.get("code").unwrap(), "operator_taken");

    second.send("jog", json!({ "stick_x": 1.0 })).await;
    let e = second.until(is_error).await;
    assert_eq!(e.get("code").unwrap(), "not_operator");
    // still connected
    second.until(|m| m.kind == MsgType::Telemetry).await;
    s.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_frames_get_distinct_errors() {
    let s = server(1.0, None).await;
    let mut c = Client::connect(&s).await;
    c.raw("{\"type\":\"hello\",").await;
    assert_eq!(c.until(is_error).await.get("code").unwrap(), "malformed");
    c.raw("{\"type\":\"fly\",\"seq\":1,\"t_s\":0}").await;
    assert_eq!(c.until(is_error).await.get("code").unwrap(), "unknown_type");
    c.raw("{\"type\":\"arc\",\"seq\":2,\"t_s\":0,\"payload\":{}}").await;
    assert_eq!(c.until(is_error).await.get("code").unwrap(), "missing_field");
    c.send("hello", json!({ "role": "observer" })).await;
    c.seq = 0;
    c.send("hello", json!({ "role": "observer" })).await;
    assert_eq!(c.until(is_error).await.get("code").unwrap(), "bad_seq");
    c.until(|m| m.kind == MsgType::Telemetry).await;
    s.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn operator_drop_in_contact_is_an_estop() {
    let s = server(10.0, None).await;
    let mut watcher = Client::connect(&s).await;
    let mut op = Client::connect(&s).await;
    op.send("hello", json!({ "role": "operator" })).await;
    op.send("jog", json!({ "buttons": ["z_down"] })).await;
    op.until(|m| m.kind == MsgType::Telemetry && m.get("in_contact") == Some(&json!(true)))
        .await;
    drop(op);
    let e = watcher.until(|m| event_kind(m) == Some("estop")).await;
    assert_eq!(e.get("reason").unwrap(), "operator disconnected");
    let before = watcher.until(|m| m.kind == MsgType::Telemetry).await;
    let after = watcher.until(|m| m.kind == MsgType::Telemetry).await;
    assert_eq!(after.get("estop_latched").unwrap(), true);
    let z = |m: &Message| m.get("joints").unwrap()["z_mm"].as_f64().unwrap();
    assert!(z(&after) > z(&before));
    s.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_session_records_and_streams_frames() {
    let s = server(20.0, None).await;
    let url = format!("ws://{}/ws", s.http_addr);
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut seq = 0;
    let mut send = |kind: &str, payload: Value| {
        seq += 1;
        Ws::Text(json!({ "type": kind, "seq": seq, "t_s": 0.0, "payload": payload }).to_string().into())
    };
    ws.send(send("hello", json!({ "role": "operator" }))).await.unwrap();
    ws.send(send("jog", json!({ "buttons": ["z_down"] }))).await.unwrap();

    let mut next = async || -> Message {
        loop {
            match timeout(WAIT, ws.next()).await.unwrap().unwrap().unwrap() {
                Ws::Text(t) => return decode(&t).unwrap(),
                _ => continue,
            }
        }
    };
    loop {
        let m = next().await;
        if m.kind == MsgType::Telemetry && m.get("travel_mm").and_then(Value::as_f64).unwrap_or(0.0) > 8.0 {
            break;
        }
    }
    drop(next);
    ws.send(send("jog", json!({}))).await.unwrap();
    ws.send(send("workflow_event", json!({ "event": "contact_made" }))).await.unwrap();
    ws.send(send("workflow_event", json!({ "event": "features_found" }))).await.unwrap();
    let mut frames = 0;
    loop {
        let m = match timeout(WAIT, ws.next()).await.unwrap().unwrap().unwrap() {
            Ws::Text(t) => decode(&t).unwrap(),
            _ => continue,
        };
        assert_ne!(m.kind, MsgType::Error, "{m:?}");
        if m.kind == MsgType::Frame {
            use base64::Engine as _;
            let b64 = m.get("pgm_base64").unwrap().as_str().unwrap();
            let bytes = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
            let f = frame_from_pgm(&bytes).unwrap();
            assert_eq!((f.width_px, f.height_px), (256, 256));
            assert_eq!(f.meta.seq, frames);
            frames += 1;
        }
        if event_kind(&m) == Some("recording_complete") {
            break;
        }
    }
    assert_eq!(frames, 50);
    s.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn console_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<title>console</title>").unwrap();
    let s = server(1.0, Some(dir.path())).await;
    let mut c = TcpStream::connect(s.http_addr).await.unwrap();
    c.write_all(b"GET /console/index.html HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut body = String::new();
    timeout(WAIT, c.read_to_string(&mut body)).await.unwrap().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("<title>console</title>"));
    s.stop().await.unwrap();
}
