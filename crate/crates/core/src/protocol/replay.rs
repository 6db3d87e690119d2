//! Re-run a logged session from its manifest and inputs and compare the
//! regenerated telemetry, events and frames with what was persisted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::protocol::log::{read_jsonl, LogBuffer, Manifest, EVENTS, FRAMES, TELEMETRY};
use crate::protocol::message::decode;
use crate::protocol::session::{EndReason, Input, SessionEngine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ticks: u64,
    pub inputs: usize,
    pub telemetry_logged: usize,
    pub telemetry_replayed: usize,
    /// Largest absolute difference over all numeric telemetry fields;
    /// infinite when the records differ in shape.
    pub max_divergence: f64,
    pub divergent_lines: Vec<usize>,
    pub events_identical: bool,
    pub frames_replayed: usize,
    pub missing_frames: Vec<String>,
    pub mismatched_frames: Vec<String>,
    pub extra_frames: Vec<String>,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.max_divergence == 0.0
            && self.telemetry_logged == self.telemetry_replayed
            && self.events_identical
            && self.missing_frames.is_empty()
            && self.mismatched_frames.is_empty()
            && self.extra_frames.is_empty()
    }
}

/// Inputs and end point recovered from an event log.
#[derive(Debug, Clone)]
pub struct LoggedInputs {
    pub inputs: Vec<(u64, Input)>,
    pub end_tick: u64,
    pub end_reason: EndReason,
}

pub fn logged_inputs(records: &[Value]) -> Result<LoggedInputs> {
    let tick_of = |r: &Value| {
        r.get("tick")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Replay(format!("event record without tick: {r}")))
    };
    let mut inputs = Vec::new();
    let mut end = None;
    for r in records {
        match r.get("record").and_then(Value::as_str) {
            Some("command") => {
                let m = r.get("message").ok_or_else(|| Error::Replay("command record without message".into()))?;
                let msg = decode(&m.to_string()).map_err(|e| Error::Replay(format!("logged command: {e}")))?;
                inputs.push((tick_of(r)?, Input::Command(msg)));
            }
            Some("operator_disconnected") => inputs.push((tick_of(r)?, Input::OperatorDisconnected)),
            Some("session_end") => {
                let reason = r
                    .get("reason")
                    .cloned()
                    .ok_or_else(|| Error::Replay("session_end without reason".into()))?;
                end = Some((tick_of(r)?, serde_json::from_value(reason)?));
            }
            _ => {}
        }
    }
    let (end_tick, end_reason) = end.ok_or_else(|| Error::Replay("event log has no session_end record".into()))?;
    Ok(LoggedInputs {
        inputs,
        end_tick,
        end_reason,
    })
}

/// Feed `inputs` (sorted by tick) to a fresh engine and stop at `end_tick`.
pub fn rerun(mut engine: SessionEngine, logged: &LoggedInputs) -> (SessionEngine, LogBuffer) {
    let mut out = LogBuffer::default();
    let mut pending = logged.inputs.iter().peekable();
    loop {
        while let Some((_, input)) = pending.next_if(|(t, _)| *t <= engine.tick()) {
            let _ = engine.apply(input.clone());
        }
        if engine.tick() >= logged.end_tick {
            break;
        }
        engine.step();
        engine.take_outbox();
        out.append(engine.take_log());
    }
    engine.finish(logged.end_reason);
    engine.take_outbox();
    out.append(engine.take_log());
    (engine, out)
}

/// Largest numeric difference between two JSON trees; infinite when their
/// shapes or non-numeric leaves differ.
pub fn divergence(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) if x == y => 0.0,
            (Some(x), Some(y)) => (x - y).abs(),
            _ => f64::INFINITY,
        },
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(p, q)| divergence(p, q)).fold(0.0, f64::max)
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x
            .iter()
            .map(|(k, p)| y.get(k).map_or(f64::INFINITY, |q| divergence(p, q)))
            .fold(0.0, f64::max),
        _ if a == b => 0.0,
        _ => f64::INFINITY,
    }
}

pub fn replay(dir: &Path) -> Result<ReplayReport> {
    let manifest = Manifest::load(dir)?;
    let records = read_jsonl(&dir.join(EVENTS))?;
    let logged = logged_inputs(&records)?;
    let engine = SessionEngine::new(manifest.config, manifest.seed)?;
    let (engine, regenerated) = rerun(engine, &logged);

    let logged_events: Vec<String> = fs::read_to_string(dir.join(EVENTS))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();

    let telemetry = read_jsonl(&dir.join(TELEMETRY))?;
    let mut max_divergence: f64 = 0.0;
    let mut divergent_lines = Vec::new();
    for (i, line) in regenerated.telemetry.iter().enumerate() {
        let fresh: Value = serde_json::from_str(line)?;
        let d = telemetry.get(i).map_or(f64::INFINITY, |old| divergence(old, &fresh));
        if d != 0.0 {
            divergent_lines.push(i + 1);
            max_divergence = max_divergence.max(d);
        }
    }

    let mut on_disk: BTreeMap<String, ()> = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(dir.join(FRAMES)) {
        for e in entries.flatten() {
            on_disk.insert(e.file_name().to_string_lossy().into_owned(), ());
        }
    }
    let mut missing_frames = Vec::new();
    let mut mismatched_frames = Vec::new();
    for (name, bytes) in &regenerated.frames {
        if on_disk.remove(name).is_none() {
            missing_frames.push(name.clone());
        } else if fs::read(dir.join(FRAMES).join(name))? != *bytes {
            mismatched_frames.push(name.clone());
        }
    }

    Ok(ReplayReport {
        ticks: engine.tick(),
        inputs: logged.inputs.len(),
        telemetry_logged: telemetry.len(),
        telemetry_replayed: regenerated.telemetry.len(),
        max_divergence,
        divergent_lines,
        events_identical: logged_events == regenerated.events,
        frames_replayed: regenerated.frames.len(),
        missing_frames,
        mismatched_frames,
        extra_frames: on_disk.into_keys().collect(),
    })
}
