//! Scripted operator input: one inbound message per line, `t_s` relative to
//! session start. The builders here generate the bundled scripts from the
//! configured geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frame::View;
use crate::protocol::message::{decode, encode, Message, MsgType};
use crate::protocol::session::home_joints;
use crate::teleop::{Button, ControlMode, JogInput};
use crate::torso::{Posture, Side};
use crate::workflow::ORDER;

/// Depth the rigid probe tip is pressed below the surface while scanning.
pub const PRESS_DEPTH_MM: f64 = 10.0;
/// Settling margin added after every timed motion.
const SETTLE_S: f64 = 0.5;

/// A scripted session: optional metadata plus the inbound messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionScript {
    pub label: Option<String>,
    /// Overrides the configured seed when present.
    pub seed: Option<u64>,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl SessionScript {
    /// Parse a script, allowing blank lines, `#` comments and one leading
    /// `{"script": {"label", "seed"}}` header. Times must be finite,
    /// non-negative and non-decreasing.
    pub fn parse(text: &str) -> Result<SessionScript> {
        let mut out = SessionScript::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |what: String| Error::Protocol(format!("script line {}: {what}", i + 1));
            if out.messages.is_empty() && out == SessionScript::default() {
                if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(line) {
                    if let Some(h) = obj.get("script") {
                        let h: Header = serde_json::from_value(h.clone()).map_err(|e| at(e.to_string()))?;
                        out.label = h.label;
                        out.seed = h.seed;
                        continue;
                    }
                }
            }
            let msg = decode(line).map_err(|e| at(e.to_string()))?;
            if !(msg.t_s >= 0.0 && msg.t_s.is_finite()) {
                return Err(at(format!("bad time {}", msg.t_s)));
            }
            if out.messages.last().is_some_and(|p| msg.t_s < p.t_s) {
                return Err(at("time goes backwards".into()));
            }
            out.messages.push(msg);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<SessionScript> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        if self.label.is_some() || self.seed.is_some() {
            let h = Header {
                label: self.label.clone(),
                seed: self.seed,
            };
            out += &serde_json::to_string(&json!({ "script": h }))?;
            out.push('\n');
        }
        for m in &self.messages {
            out += &encode(m)?;
        }
        Ok(out)
    }
}

fn labelled(label: &str, messages: Vec<Message>) -> SessionScript {
    SessionScript {
        label: Some(label.into()),
        seed: None,
        messages,
    }
}

/// Timed message writer with a running clock and sequence counter.
#[derive(Debug, Clone, Default)]
pub struct ScriptBuilder {
    pub t_s: f64,
    seq: u64,
    out: Vec<Message>,
}

impl ScriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, kind: MsgType, payload: Value) -> &mut Self {
        self.seq += 1;
        // millisecond grid keeps script times exact in decimal
        let t = (self.t_s * 1000.0).round() / 1000.0;
        self.out.push(Message::with_payload(kind, self.seq, t, payload));
        self
    }

    pub fn wait(&mut self, secs: f64) -> &mut Self {
        self.t_s += secs;
        self
    }

    pub fn hello(&mut self) -> &mut Self {
        self.send(MsgType::Hello, json!({ "role": "operator" }))
    }

    /// Hold `input` for `secs`, then release.
    pub fn jog(&mut self, input: JogInput, secs: f64) -> &mut Self {
        self.send(MsgType::Jog, serde_json::to_value(input).expect("jog input"));
        self.wait(secs);
        self.send(MsgType::Jog, serde_json::to_value(JogInput::default()).expect("jog input"))
    }

    pub fn jog_y(&mut self, dy_mm: f64, speed_mm_s: f64) -> &mut Self {
        if dy_mm == 0.0 {
            return self;
        }
        let input = JogInput {
            stick_y: dy_mm.signum(),
            ..Default::default()
        };
        self.jog(input, dy_mm.abs() / speed_mm_s)
    }

    pub fn jog_z(&mut self, dz_mm: f64, speed_mm_s: f64) -> &mut Self {
        let button = if dz_mm < 0.0 { Button::ZDown } else { Button::ZUp };
        let input = JogInput {
            buttons: [button].into_iter().collect(),
            ..Default::default()
        };
        self.jog(input, dz_mm.abs() / speed_mm_s)
    }

    pub fn mode(&mut self, mode: ControlMode) -> &mut Self {
        self.send(MsgType::SetMode, json!({ "mode": mode }))
    }

    pub fn arc(&mut self, alpha_rad: f64) -> &mut Self {
        self.send(MsgType::Arc, json!({ "target_alpha_rad": alpha_rad }))
    }

    pub fn probe(&mut self, target_rad: f64) -> &mut Self {
        self.send(MsgType::ProbeRotate, json!({ "target_rad": target_rad }))
    }

    pub fn event(&mut self, event: &str) -> &mut Self {
        self.send(MsgType::WorkflowEvent, json!({ "event": event }))
    }

    pub fn finish(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.out)
    }
}

struct Planner<'a> {
    cfg: &'a Config,
    b: ScriptBuilder,
    alpha: f64,
    y_mm: f64,
    phi: f64,
    rotation_done_s: f64,
}

impl<'a> Planner<'a> {
    fn new(cfg: &'a Config) -> Self {
        Self {
            cfg,
            b: ScriptBuilder::new(),
            alpha: 0.0,
            y_mm: 0.0,
            phi: 0.0,
            rotation_done_s: 0.0,
        }
    }

    fn v(&self) -> f64 {
        self.cfg.speeds.translation_mm_s
    }

    fn settle(&mut self) {
        self.b.wait(SETTLE_S);
    }

    /// Height of the home tip above the resting apex.
    fn home_gap_mm(&self) -> f64 {
        let q = home_joints(self.cfg);
        let tip_z = self.cfg.endeffector.origin_mm[2] + q.z_mm - self.cfg.endeffector.le_mm;
        let (_, b) = self.cfg.torso.dims().semi_axes();
        tip_z - (self.cfg.torso.center_mm[2] + b)
    }

    /// Rigid lift that clears the breathing surface by the safety clearance.
    fn lift_mm(&self) -> f64 {
        PRESS_DEPTH_MM + self.cfg.breathing.amplitude_mm + self.cfg.safety.clearance_mm
    }

    fn move_z(&mut self, dz_mm: f64) {
        self.b.mode(ControlMode::EachAxis);
        let v = self.v();
        self.b.jog_z(dz_mm, v);
        self.settle();
    }

    fn move_y(&mut self, y_mm: f64) {
        if y_mm != self.y_mm {
            self.b.mode(ControlMode::EachAxis);
            let v = self.v();
            self.b.jog_y(y_mm - self.y_mm, v);
            self.y_mm = y_mm;
            self.settle();
        }
    }

    fn arc_to(&mut self, alpha: f64) {
        if alpha != self.alpha {
            self.b.arc(alpha);
            self.b.wait((alpha - self.alpha).abs() / self.cfg.arc.rate_max);
            self.alpha = alpha;
            self.settle();
        }
    }

    /// Start turning the probe; returns the turn time.
    fn rotate_probe(&mut self, phi: f64) -> f64 {
        let t = (phi - self.phi).abs() / self.cfg.speeds.rotation_rad_s;
        self.b.probe(phi);
        self.phi = phi;
        self.rotation_done_s = self.b.t_s + t;
        t
    }

    fn wait_rotation(&mut self) {
        if self.b.t_s < self.rotation_done_s {
            let dt = self.rotation_done_s - self.b.t_s;
            self.b.wait(dt);
        }
    }

    /// Arrival events, then both views; leaves the probe turning back to
    /// the perpendicular view.
    fn record_region(&mut self, arrival: &str) {
        self.wait_rotation();
        self.b.event(arrival);
        self.b.wait(0.2);
        self.b.event("features_found");
        let rec = self.cfg.workflow.record_duration_s;
        self.b.wait(rec + SETTLE_S);
        let t = self.rotate_probe(View::Parallel.probe_angle_rad());
        self.b.wait(t + rec + SETTLE_S);
        self.rotate_probe(View::Perpendicular.probe_angle_rad());
    }
}

/// Complete ten-region protocol: descend at the apex, slide and arc to each
/// anchor in order, record both views, and reposition before region 5.
pub fn full_blue_script(cfg: &Config) -> Result<SessionScript> {
    let torso = cfg.torso();
    let mut p = Planner::new(cfg);
    p.b.hello();
    p.b.wait(0.2);
    let first = torso.region_anchor(ORDER[0].0, ORDER[0].1, Posture::Supine)?;
    p.move_y(first.y_mm);
    let descend = p.home_gap_mm() + PRESS_DEPTH_MM;
    p.move_z(-descend);
    for &(region, side) in ORDER.iter() {
        let anchor = torso.region_anchor(region, side, Posture::required_for(region))?;
        if region == 5 && side == Side::Right {
            p.arc_to(0.0);
            let lift = p.lift_mm();
            p.move_z(lift);
            p.b.event("reposition_confirmed");
            p.b.wait(0.2);
            p.move_y(anchor.y_mm);
            p.move_z(-lift);
        }
        p.move_y(anchor.y_mm);
        p.arc_to(anchor.alpha_rad);
        p.record_region(if region == 3 { "arc_transit_done" } else { "contact_made" });
    }
    Ok(labelled("full-blue", p.b.finish()))
}

/// Drive the probe straight down at the apex until the spring bottoms out.
pub fn saturation_push_script(cfg: &Config) -> Result<SessionScript> {
    let mut p = Planner::new(cfg);
    p.b.hello();
    p.b.wait(0.2);
    let depth = p.home_gap_mm() + cfg.spring.travel_max_mm + 20.0;
    p.move_z(-depth);
    Ok(labelled("saturation-push", p.b.finish()))
}

/// The full script cut off just before the patient is repositioned.
pub fn missing_reposition_script(cfg: &Config) -> Result<SessionScript> {
    let mut full = full_blue_script(cfg)?.messages;
    let cut = full
        .iter()
        .position(|m| m.get("event").and_then(Value::as_str) == Some("reposition_confirmed"))
        .ok_or_else(|| Error::Protocol("full script has no reposition step".into()))?;
    full.truncate(cut);
    Ok(labelled("missing-reposition", full))
}
