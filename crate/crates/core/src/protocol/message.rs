//! Newline-delimited JSON messages exchanged between clients and the
//! session server.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::frame::View;
use crate::teleop::{ControlMode, JogInput};
use crate::torso::Side;
use crate::workflow::WorkflowEvent;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("missing field {0:?}")]
    MissingField(String),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Malformed(_) => "malformed",
            DecodeError::UnknownType(_) => "unknown_type",
            DecodeError::MissingField(_) => "missing_field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgType {
    Hello,
    Jog,
    SetMode,
    Arc,
    ProbeRotate,
    Record,
    WorkflowEvent,
    Vas,
    Estop,
    Reset,
    Telemetry,
    Frame,
    Event,
    Error,
    SessionComplete,
}

impl MsgType {
    pub const ALL: [MsgType; 15] = [
        MsgType::Hello,
        MsgType::Jog,
        MsgType::SetMode,
        MsgType::Arc,
        MsgType::ProbeRotate,
        MsgType::Record,
        MsgType::WorkflowEvent,
        MsgType::Vas,
        MsgType::Estop,
        MsgType::Reset,
        MsgType::Telemetry,
        MsgType::Frame,
        MsgType::Event,
        MsgType::Error,
        MsgType::SessionComplete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Hello => "hello",
            MsgType::Jog => "jog",
            MsgType::SetMode => "set_mode",
            MsgType::Arc => "arc",
            MsgType::ProbeRotate => "probe_rotate",
            MsgType::Record => "record",
            MsgType::WorkflowEvent => "workflow_event",
            MsgType::Vas => "vas",
            MsgType::Estop => "estop",
            MsgType::Reset => "reset",
            MsgType::Telemetry => "telemetry",
            MsgType::Frame => "frame",
            MsgType::Event => "event",
            MsgType::Error => "error",
            MsgType::SessionComplete => "session_complete",
        }
    }

    pub fn parse(s: &str) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Payload keys a message of this type must carry.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            MsgType::Hello => &["role"],
            MsgType::SetMode => &["mode"],
            MsgType::Arc => &["target_alpha_rad"],
            MsgType::ProbeRotate => &["target_rad"],
            MsgType::WorkflowEvent => &["event"],
            MsgType::Vas => &["score"],
            MsgType::Error => &["code", "message"],
            MsgType::Frame => &["pgm_base64"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MsgType,
    pub seq: u64,
    pub t_s: f64,
    pub payload: Map<String, Value>,
}

impl Message {
    pub fn new(kind: MsgType, seq: u64, t_s: f64) -> Self {
        Self {
            kind,
            seq,
            t_s,
            payload: Map::new(),
        }
    }

    /// Message with a payload given as a JSON object (anything else is
    /// treated as an empty payload).
    pub fn with_payload(kind: MsgType, seq: u64, t_s: f64, payload: Value) -> Self {
        let payload = match payload {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            kind,
            seq,
            t_s,
            payload,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.payload.get(key)
    }
}

/// One line: `{"type":…,"seq":…,"t_s":…[,"payload":{…}]}` and a newline.
/// Payload keys come out sorted.
pub fn encode(msg: &Message) -> Result<String> {
    if !msg.t_s.is_finite() {
        return Err(Error::Encode(format!("t_s {} is not finite", msg.t_s)));
    }
    let mut out = String::with_capacity(64);
    out.push_str("{\"type\":\"");
    out.push_str(msg.kind.as_str());
    out.push_str("\",\"seq\":");
    out.push_str(&msg.seq.to_string());
    out.push_str(",\"t_s\":");
    out.push_str(&serde_json::to_string(&msg.t_s).map_err(|e| Error::Encode(e.to_string()))?);
    if !msg.payload.is_empty() {
        out.push_str(",\"payload\":");
        out.push_str(&serde_json::to_string(&msg.payload).map_err(|e| Error::Encode(e.to_string()))?);
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn decode(frame: &str) -> std::result::Result<Message, DecodeError> {
    let line = frame.strip_suffix('\n').unwrap_or(frame);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.contains('\n') {
        return Err(DecodeError::Malformed("embedded newline".into()));
    }
    let value: Value = serde_json::from_str(line).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(DecodeError::Malformed("frame is not a JSON object".into()));
    };
    let kind = match obj.get("type") {
        None => return Err(DecodeError::MissingField("type".into())),
        Some(Value::String(s)) => MsgType::parse(s).ok_or_else(|| DecodeError::UnknownType(s.clone()))?,
        Some(_) => return Err(DecodeError::Malformed("type is not a string".into())),
    };
    let seq = match obj.get("seq") {
        None => return Err(DecodeError::MissingField("seq".into())),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| DecodeError::Malformed("seq is not a non-negative integer".into()))?,
    };
    let t_s = match obj.get("t_s") {
        None => return Err(DecodeError::MissingField("t_s".into())),
        Some(v) => v.as_f64().ok_or_else(|| DecodeError::Malformed("t_s is not a number".into()))?,
    };
    let payload = match obj.remove("payload") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(DecodeError::Malformed("payload is not an object".into())),
    };
    for key in kind.required_fields() {
        if !payload.contains_key(*key) {
            return Err(DecodeError::MissingField(format!("payload.{key}")));
        }
    }
    Ok(Message {
        kind,
        seq,
        t_s,
        payload,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Operator,
    Observer,
}

/// Inbound request carried by a client message.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Hello { role: Role },
    Jog(JogInput),
    SetMode(ControlMode),
    Arc { target_alpha_rad: f64 },
    ProbeRotate { target_rad: f64 },
    Record { view: Option<View> },
    Workflow(WorkflowEvent),
    Vas { score: f64 },
    Estop,
    Reset,
    Note { text: String },
}

fn field<T: serde::de::DeserializeOwned>(msg: &Message, key: &str) -> Result<T> {
    let v = msg
        .get(key)
        .ok_or_else(|| Error::Decode(DecodeError::MissingField(format!("payload.{key}"))))?;
    serde_json::from_value(v.clone())
        .map_err(|e| Error::Decode(DecodeError::Malformed(format!("payload.{key}: {e}"))))
}

fn number(msg: &Message, key: &str) -> Result<f64> {
    field::<f64>(msg, key)
}

impl Command {
    pub fn from_message(msg: &Message) -> Result<Command> {
        Ok(match msg.kind {
            MsgType::Hello => Command::Hello {
                role: field(msg, "role")?,
            },
            MsgType::Jog => Command::Jog(
                serde_json::from_value(Value::Object(msg.payload.clone()))
                    .map_err(|e| Error::Decode(DecodeError::Malformed(format!("jog payload: {e}"))))?,
            ),
            MsgType::SetMode => Command::SetMode(field(msg, "mode")?),
            MsgType::Arc => Command::Arc {
                target_alpha_rad: number(msg, "target_alpha_rad")?,
            },
            MsgType::ProbeRotate => Command::ProbeRotate {
                target_rad: number(msg, "target_rad")?,
            },
            MsgType::Record => Command::Record {
                view: match msg.get("view") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(field(msg, "view")?),
                },
            },
            MsgType::WorkflowEvent => {
                let name: String = field(msg, "event")?;
                let region: Option<u8> = match msg.get("region") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(field(msg, "region")?),
                };
                let side: Option<Side> = match msg.get("side") {
                    None | Some(Value::Null) => None,
                    Some(_) => Some(field(msg, "side")?),
                };
                Command::Workflow(match name.as_str() {
                    "contact_made" => WorkflowEvent::ContactMade { region, side },
                    "features_found" => WorkflowEvent::FeaturesFound,
                    "arc_transit_done" => WorkflowEvent::ArcTransitDone,
                    "reposition_confirmed" => WorkflowEvent::RepositionConfirmed,
                    "abort" => WorkflowEvent::Abort {
                        reason: msg
                            .get("reason")
                            .and_then(Value::as_str)
                            .unwrap_or("operator abort")
                            .to_string(),
                    },
                    "recording_done" => {
                        return Err(Error::Protocol("recording_done is issued by the server".into()))
                    }
                    other => return Err(Error::Protocol(format!("unknown workflow event {other:?}"))),
                })
            }
            MsgType::Vas => Command::Vas {
                score: number(msg, "score")?,
            },
            MsgType::Estop => Command::Estop,
            MsgType::Reset => Command::Reset,
            MsgType::Event => Command::Note {
                text: msg.get("note").and_then(Value::as_str).unwrap_or_default().to_string(),
            },
            other => {
                return Err(Error::Protocol(format!(
                    "{} messages are sent by the server only",
                    other.as_str()
                )))
            }
        })
    }

    /// Whether only the operator may send this command.
    pub fn needs_operator(&self) -> bool {
        !matches!(self, Command::Hello { .. } | Command::Note { .. })
    }
}

/// Tracks the last sequence number seen from one sender.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeqTracker {
    last: Option<u64>,
}

impl SeqTracker {
    pub fn accept(&mut self, seq: u64) -> Result<()> {
        if let Some(prev) = self.last {
            if seq <= prev {
                return Err(Error::Protocol(format!("seq {seq} does not follow {prev}")));
            }
        }
        self.last = Some(seq);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn estop_encoding() {
        let m = Message::new(MsgType::Estop, 7, 1.25);
        assert_eq!(encode(&m).unwrap(), "{\"type\":\"estop\",\"seq\":7,\"t_s\":1.25}\n");
    }

    #[test]
    fn payload_keys_sorted_and_no_inner_newlines() {
        let m = Message::with_payload(MsgType::Event, 1, 0.0, json!({"z": 1, "a": "x\ny"}));
        let s = encode(&m).unwrap();
        assert_eq!(s, "{\"type\":\"event\",\"seq\":1,\"t_s\":0.0,\"payload\":{\"a\":\"x\\ny\",\"z\":1}}\n");
        assert_eq!(s.matches('\n').count(), 1);
    }

    #[test]
    fn jog_is_sent_unclamped_and_clamped_on_receipt() {
        let m = Message::with_payload(MsgType::Jog, 1, 0.0, json!({"stick_x": 2.0}));
        let line = encode(&m).unwrap();
        assert!(line.contains("\"stick_x\":2.0"));
        let Command::Jog(j) = Command::from_message(&decode(&line).unwrap()).unwrap() else {
            panic!()
        };
        assert_eq!(j.stick_x, 2.0);
        assert_eq!(j.sanitized().stick_x, 1.0);
    }

    #[test]
    fn decode_errors_are_distinct() {
        assert!(matches!(decode("{\"type\":\"estop\",\"seq\":1"), Err(DecodeError::Malformed(_))));
        assert_eq!(
            decode("{\"type\":\"fly\",\"seq\":1,\"t_s\":0}"),
            Err(DecodeError::UnknownType("fly".into()))
        );
        assert_eq!(
            decode("{\"type\":\"estop\",\"t_s\":0}"),
            Err(DecodeError::MissingField("seq".into()))
        );
        assert_eq!(
            decode("{\"type\":\"vas\",\"seq\":1,\"t_s\":0,\"payload\":{}}"),
            Err(DecodeError::MissingField("payload.score".into()))
        );
        assert!(matches!(decode("[1,2]"), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn commands() {
        let m = decode(r#"{"type":"workflow_event","seq":3,"t_s":1,"payload":{"event":"contact_made","region":2,"side":"left"}}"#).unwrap();
        assert_eq!(
            Command::from_message(&m).unwrap(),
            Command::Workflow(WorkflowEvent::ContactMade {
                region: Some(2),
                side: Some(Side::Left)
            })
        );
        let m = decode(r#"{"type":"set_mode","seq":3,"t_s":1,"payload":{"mode":"arc_motion"}}"#).unwrap();
        assert_eq!(Command::from_message(&m).unwrap(), Command::SetMode(ControlMode::ArcMotion));
        let m = decode(r#"{"type":"telemetry","seq":3,"t_s":1}"#).unwrap();
        assert!(matches!(Command::from_message(&m), Err(Error::Protocol(_))));
    }

    #[test]
    fn seq_tracking() {
        let mut t = SeqTracker::default();
        t.accept(1).unwrap();
        t.accept(5).unwrap();
        assert!(t.accept(5).is_err());
        t.accept(6).unwrap();
    }

    fn leaf() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|v| json!(v)),
            (-1e9..1e9f64).prop_map(|v| json!(v)),
            "[a-z \\n\"\\\\é]{0,8}".prop_map(Value::String),
        ]
    }

    fn payload() -> impl Strategy<Value = Map<String, Value>> {
        let value = leaf().prop_recursive(2, 8, 3, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..3).prop_map(Value::Array),
                proptest::collection::btree_map("[a-z_]{1,5}", inner, 0..3)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        });
        proptest::collection::btree_map("[a-z_]{1,8}", value, 0..4).prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn round_trip(kind in 0usize..15, seq in any::<u64>(), t in 0.0..1e6f64, mut p in payload()) {
            let kind = MsgType::ALL[kind];
            for key in kind.required_fields() {
                p.entry(key.to_string()).or_insert(json!(1));
            }
            let m = Message { kind, seq, t_s: t, payload: p };
            let line = encode(&m).unwrap();
            prop_assert!(line.ends_with('\n'));
            prop_assert_eq!(line.matches('\n').count(), 1);
            prop_assert_eq!(decode(&line).unwrap(), m);
        }
    }
}
