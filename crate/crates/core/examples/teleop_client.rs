//! Start a session server in-process, connect over TCP as the operator,
//! lower the probe and print telemetry until contact.

use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

use lus_teleop::protocol::message::{decode, encode, Message, MsgType};
use lus_teleop::protocol::server::{start, ServeOptions};
use lus_teleop::Config;

#[tokio::main]
async fn main() -> lus_teleop::Result<()> {
    let cfg = Config::default();
    let opts = ServeOptions {
        time_scale: 4.0,
        ..ServeOptions::local(&cfg)
    };
    let server = start(cfg, opts).await?;
    println!("server: tcp {}  http {}", server.tcp_addr, server.http_addr);

    let (r, mut w) = TcpStream::connect(server.tcp_addr).await?.into_split();
    let mut lines = BufReader::new(r).lines();
    let hello = Message::with_payload(MsgType::Hello, 1, 0.0, json!({ "role": "operator" }));
    let down = Message::with_payload(MsgType::Jog, 2, 0.0, json!({ "buttons": ["z_down"] }));
    for m in [hello, down] {
        w.write_all(encode(&m)?.as_bytes()).await?;
    }

    let mut contact_at = None;
    while let Some(line) = lines.next_line().await? {
        let Ok(m) = decode(&line) else { continue };
        match m.kind {
            MsgType::Telemetry if m.t_s * 10.0 % 1.0 < 1e-9 || contact_at.is_some() => {
                let z = m.get("tip_mm").map_or(f64::NAN, |t| t[2].as_f64().unwrap_or(f64::NAN));
                let force = m.get("force_n").and_then(|v| v.as_f64()).unwrap_or(0.0);
                println!("t {:>6.3} s  tip z {z:>7.2} mm  force {force:.4} N", m.t_s);
                if contact_at.is_some_and(|t0: f64| m.t_s > t0 + 0.2) {
                    break;
                }
                if m.get("in_contact") == Some(&json!(true)) && contact_at.is_none() {
                    println!("contact");
                    contact_at = Some(m.t_s);
                }
            }
            MsgType::Event | MsgType::Error => println!("{}", line),
            _ => {}
        }
    }
    let release = Message::with_payload(MsgType::Jog, 3, 0.0, json!({}));
    w.write_all(encode(&release)?.as_bytes()).await?;
    let summary = server.stop().await?;
    println!("session ended: {}", summary["reason"]);
    Ok(())
}
