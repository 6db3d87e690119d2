//! The single owner of a running session: physics, control, workflow,
//! recordings and the log, advanced one tick at a time. Transports feed it
//! inputs and drain its outbound messages; replay feeds it the logged
//! inputs.

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frame::{encode_pgm, FrameGenerator, UsFrame, View};
use crate::kinematics::JointState;
use crate::protocol::log::LogBuffer;
use crate::protocol::message::{encode, Command, Message, MsgType};
use crate::sim::{SimState, Simulator};
use crate::teleop::{vas_report, ButtonEdge, Controller, SafetyLevel};
use crate::torso::Posture;
use crate::workflow::{session_report, Phase, RecordingEntry, RecordingIndex, WorkflowEvent, WorkflowState};

/// Largest probe-angle error accepted when a recording starts.
pub const VIEW_TOLERANCE_RAD: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Inputs that change a session, in the order they are logged.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Command(Message),
    OperatorDisconnected,
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveRecording {
    view: View,
    region: u8,
    side: crate::torso::Side,
    start_tick: u64,
    first_seq: u64,
    frames: u64,
    force_sum: f64,
    force_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Complete,
    Aborted,
    Timeout,
    ProtocolViolation,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct SessionEngine {
    pub cfg: Config,
    pub seed: u64,
    pub sim: Simulator,
    pub state: SimState,
    pub controller: Controller,
    pub workflow: WorkflowState,
    pub index: RecordingIndex,
    frames: FrameGenerator,
    recording: Option<ActiveRecording>,
    next_frame_seq: u64,
    out_seq: u64,
    outbox: Vec<Message>,
    log: LogBuffer,
    /// Whether frame messages (base64 PGM) are produced for clients.
    pub stream_frames: bool,
    pub max_force_n: f64,
    pub estop_count: u32,
    telemetry_every: u64,
    persist_every: u64,
    frame_every: u64,
    record_frames: u64,
}

/// Starting pose: probe vertical above the torso axis, 20 mm below the top
/// of the z travel.
pub fn home_joints(cfg: &Config) -> JointState {
    let o = cfg.endeffector.origin_mm;
    let c = cfg.torso.center_mm;
    JointState {
        x_mm: c[0] - o[0],
        y_mm: c[1] - o[1],
        z_mm: cfg.joints.z.range_mm - 20.0,
        psi_rad: 0.0,
        phi_probe_rad: 0.0,
    }
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

impl SessionEngine {
    pub fn new(cfg: Config, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let sim = Simulator::from_config(&cfg);
        let state = sim.initial_state(home_joints(&cfg), seed);
        let frame_every = cfg.sim.frame_every();
        let record_frames = (cfg.workflow.record_duration_s * cfg.sim.frame_hz).ceil() as u64;
        Ok(Self {
            controller: Controller::from_config(&cfg),
            workflow: WorkflowState::new(cfg.workflow.free_scan, cfg.workflow.record_duration_s),
            index: RecordingIndex::default(),
            frames: FrameGenerator::new(cfg.frame.clone(), cfg.pathology.b_lines, seed),
            recording: None,
            next_frame_seq: 0,
            out_seq: 0,
            outbox: Vec::new(),
            log: LogBuffer::default(),
            stream_frames: false,
            max_force_n: 0.0,
            estop_count: 0,
            telemetry_every: cfg.sim.telemetry_every(),
            persist_every: cfg.sim.persist_every(),
            frame_every,
            record_frames,
            sim,
            state,
            seed,
            cfg,
        })
    }

    pub fn tick(&self) -> u64 {
        self.state.tick
    }

    pub fn t_s(&self) -> f64 {
        self.state.t_s
    }

    pub fn is_over(&self) -> bool {
        self.workflow.phase.is_terminal()
    }

    pub fn take_outbox(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_log(&mut self) -> LogBuffer {
        std::mem::take(&mut self.log)
    }

    /// Allocate an outbound message outside the outbox (direct replies).
    pub fn reply(&mut self, kind: MsgType, payload: Value) -> Message {
        self.out_seq += 1;
        Message::with_payload(kind, self.out_seq, self.state.t_s, payload)
    }

    fn emit(&mut self, kind: MsgType, payload: Value) -> Message {
        self.out_seq += 1;
        let m = Message::with_payload(kind, self.out_seq, self.state.t_s, payload);
        self.outbox.push(m.clone());
        m
    }

    fn event(&mut self, kind: &str, mut payload: Value) {
        payload["kind"] = json!(kind);
        self.emit(MsgType::Event, payload);
    }

    fn log_record(&mut self, record: &str, mut body: Value) {
        body["record"] = json!(record);
        body["tick"] = json!(self.state.tick);
        body["t_s"] = json!(self.state.t_s);
        self.log.event(&body);
    }

    /// Apply one input at the current tick. Rejected commands leave the
    /// session unchanged apart from the log entry.
    pub fn apply(&mut self, input: Input) -> Result<()> {
        match input {
            Input::Command(msg) => {
                let wire: Value = serde_json::from_str(&encode(&msg)?)?;
                self.log_record("command", json!({ "message": wire }));
                let result = Command::from_message(&msg).and_then(|c| self.execute(c));
                if let Err(e) = &result {
                    self.log_record("rejected", json!({ "seq": msg.seq, "error": e.to_string() }));
                }
                result
            }
            Input::OperatorDisconnected => {
                self.log_record("operator_disconnected", json!({}));
                self.estop("operator disconnected");
                Ok(())
            }
        }
    }

    fn require_contact(&self, what: &str) -> Result<()> {
        if self.state.spring.in_contact {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{what} requires probe contact")))
        }
    }

    fn execute(&mut self, cmd: Command) -> Result<()> {
        match cmd {
            Command::Hello { .. } => Ok(()),
            Command::Jog(input) => {
                for edge in self.controller.apply_jog(input) {
                    match edge {
                        ButtonEdge::ModeToggle => {
                            let m = self.controller.mode.toggled();
                            self.set_mode(m);
                        }
                        ButtonEdge::Record => self.start_recording(None)?,
                        ButtonEdge::Estop => self.estop("operator estop"),
                    }
                }
                Ok(())
            }
            Command::SetMode(mode) => {
                self.set_mode(mode);
                Ok(())
            }
            Command::Arc { target_alpha_rad } => {
                self.controller.goto_arc(&self.sim, &self.state, target_alpha_rad)?;
                self.event("mode", json!({ "mode": self.controller.mode.as_str() }));
                Ok(())
            }
            Command::ProbeRotate { target_rad } => self.controller.rotate_probe_to(&self.sim, target_rad),
            Command::Record { view } => self.start_recording(view),
            Command::Workflow(ev) => self.workflow_event(ev),
            Command::Vas { score } => {
                let verdict = vas_report(score)?;
                self.log_record("vas", json!({ "score": score, "level": verdict.level.as_str() }));
                self.event("vas", json!({ "score": score, "level": verdict.level.as_str() }));
                if verdict.level == SafetyLevel::Estop {
                    self.estop(&verdict.reason);
                    self.abort(&verdict.reason);
                }
                Ok(())
            }
            Command::Estop => {
                self.estop("operator estop");
                Ok(())
            }
            Command::Reset => {
                if self.controller.estop_latched {
                    self.controller.reset();
                    self.event("reset", json!({ "mode": self.controller.mode.as_str() }));
                }
                Ok(())
            }
            Command::Note { text } => {
                self.event("note", json!({ "note": text }));
                Ok(())
            }
        }
    }

    fn set_mode(&mut self, mode: crate::teleop::ControlMode) {
        self.controller.set_mode(mode);
        self.event("mode", json!({ "mode": mode.as_str() }));
    }

    fn workflow_event(&mut self, ev: WorkflowEvent) -> Result<()> {
        match ev {
            WorkflowEvent::ContactMade { .. } | WorkflowEvent::FeaturesFound | WorkflowEvent::ArcTransitDone => {
                self.require_contact(ev.name())?
            }
            WorkflowEvent::RepositionConfirmed if self.state.spring.in_contact => {
                return Err(Error::Protocol("lift the probe before repositioning the patient".into()))
            }
            _ => {}
        }
        if matches!(ev, WorkflowEvent::Abort { .. }) {
            self.cancel_recording("session aborted");
        }
        self.advance_workflow(&ev)
    }

    fn advance_workflow(&mut self, ev: &WorkflowEvent) -> Result<()> {
        let tr = self.workflow.apply(ev, self.state.t_s)?;
        let body = serde_json::to_value(&tr)?;
        self.log_record("workflow", body.clone());
        self.event("workflow", body);
        if tr.phase_after == Phase::Scanning && self.workflow.posture != self.state.posture {
            self.state = self.sim.with_posture(&self.state, self.workflow.posture);
        }
        Ok(())
    }

    fn abort(&mut self, reason: &str) {
        self.cancel_recording(reason);
        if !self.workflow.phase.is_terminal() {
            let ev = WorkflowEvent::Abort { reason: reason.into() };
            // same-tick events would fail the strict time order; abort wins
            if self.workflow.updated_at.is_some_and(|t| t >= self.state.t_s) {
                self.workflow.updated_at = Some(self.state.t_s - f64::EPSILON * self.state.t_s.max(1.0));
            }
            let _ = self.advance_workflow(&ev);
        }
    }

    fn estop(&mut self, reason: &str) {
        if !self.controller.estop_latched {
            self.estop_count += 1;
            self.log_record("estop", json!({ "reason": reason, "force_n": self.state.force_n }));
            self.event("estop", json!({ "reason": reason, "force_n": self.state.force_n }));
        }
        self.controller.latch_estop(reason);
        self.cancel_recording("estop");
    }

    /// The view a recording could start for right now, or why not.
    fn recording_ready(&self, view: Option<View>) -> Result<View> {
        if self.controller.estop_latched {
            return Err(Error::Protocol("cannot record while the estop is latched".into()));
        }
        let want = self.workflow.substate.recording_view().filter(|_| self.workflow.phase == Phase::Scanning);
        let want = want.ok_or_else(|| {
            Error::Protocol(format!("no recording expected in {:?}", self.workflow.substate))
        })?;
        if view.is_some_and(|v| v != want) {
            return Err(Error::Protocol(format!("the {} view is due", want.as_str())));
        }
        self.require_contact("record")?;
        let err = (self.state.joints.phi_probe_rad - want.probe_angle_rad()).abs();
        if err > VIEW_TOLERANCE_RAD {
            return Err(Error::Protocol(format!(
                "probe must be rotated to {:.4} rad for the {} view",
                want.probe_angle_rad(),
                want.as_str()
            )));
        }
        Ok(want)
    }

    /// Explicit record request. A record_* substate arms recording on its
    /// own, so this only confirms the due view or starts it early.
    fn start_recording(&mut self, view: Option<View>) -> Result<()> {
        if let Some(r) = &self.recording {
            return match view {
                Some(v) if v != r.view => Err(Error::Protocol(format!("the {} view is recording", r.view.as_str()))),
                _ => Ok(()),
            };
        }
        let want = self.recording_ready(view)?;
        self.begin_recording(want);
        Ok(())
    }

    fn begin_recording(&mut self, view: View) {
        self.recording = Some(ActiveRecording {
            view,
            region: self.workflow.region,
            side: self.workflow.side,
            start_tick: self.state.tick,
            first_seq: self.next_frame_seq,
            frames: 0,
            force_sum: 0.0,
            force_max: 0.0,
        });
        let body = json!({ "region": self.workflow.region, "side": self.workflow.side, "view": view });
        self.log_record("recording_started", body.clone());
        self.event("recording_started", body);
    }

    fn cancel_recording(&mut self, reason: &str) {
        if let Some(r) = self.recording.take() {
            let body = json!({ "region": r.region, "side": r.side, "view": r.view, "frames": r.frames, "reason": reason });
            self.log_record("recording_failed", body.clone());
            self.event("recording_failed", body);
        }
    }

    /// One physics tick followed by recording, telemetry and safety
    /// bookkeeping at the new time.
    pub fn step(&mut self) {
        let was_latched = self.controller.estop_latched;
        let cmd = self.controller.command(&self.sim, &self.state);
        if self.controller.estop_latched && !was_latched {
            // the safety monitor latched on the current reading
            let reason = self.controller.estop_reason.clone().unwrap_or_default();
            self.controller.estop_latched = false;
            self.estop(&reason);
            self.abort(&format!("safety: {reason}"));
        }
        self.state = self.sim.step(&self.state, cmd);
        self.max_force_n = self.max_force_n.max(self.state.force_n);
        self.record_tick();
        let tick = self.state.tick;
        if tick % self.telemetry_every == 0 || tick % self.persist_every == 0 {
            let msg = self.emit(MsgType::Telemetry, self.telemetry_payload());
            if tick % self.persist_every == 0 {
                let line = encode(&msg).expect("telemetry is finite");
                self.log.telemetry.push(line.trim_end().to_string());
            }
            if tick % self.telemetry_every != 0 {
                self.outbox.pop();
            }
        }
    }

    fn record_tick(&mut self) {
        if self.recording.is_none() {
            match self.recording_ready(None) {
                Ok(view) => self.begin_recording(view),
                Err(_) => return,
            }
        }
        let Some(rec) = self.recording.clone() else { return };
        let elapsed = self.state.tick - rec.start_tick;
        if elapsed % self.frame_every != 0 {
            return;
        }
        if rec.frames >= self.record_frames {
            self.finish_recording(rec);
            return;
        }
        let seq = self.next_frame_seq;
        match self.frames.render(&self.state, &self.sim.torso, rec.region, rec.side, rec.view, seq) {
            Ok(frame) => {
                self.next_frame_seq += 1;
                self.store_frame(&frame);
                let r = self.recording.as_mut().expect("active recording");
                r.frames += 1;
                r.force_sum += frame.meta.force_n;
                r.force_max = r.force_max.max(frame.meta.force_n);
            }
            Err(_) => self.cancel_recording("probe lost contact"),
        }
    }

    fn store_frame(&mut self, frame: &UsFrame) {
        let bytes = encode_pgm(frame).expect("frame metadata is serialisable");
        if self.stream_frames {
            let m = &frame.meta;
            let payload = json!({
                "region": m.region,
                "side": m.side,
                "view": m.view,
                "seq": m.seq,
                "width_px": frame.width_px,
                "height_px": frame.height_px,
                "force_n": m.force_n,
                "incidence_rad": m.incidence_rad,
                "pgm_base64": base64::engine::general_purpose::STANDARD.encode(&bytes),
            });
            self.emit(MsgType::Frame, payload);
        }
        self.log.frames.push((frame.file_name(), bytes));
    }

    fn finish_recording(&mut self, rec: ActiveRecording) {
        self.recording = None;
        let duration_s = rec.frames as f64 / self.cfg.sim.frame_hz;
        let entry = RecordingEntry {
            region: rec.region,
            side: rec.side,
            view: rec.view,
            first_seq: rec.first_seq,
            last_seq: rec.first_seq + rec.frames - 1,
            frames: rec.frames,
            duration_s,
            mean_force_n: rec.force_sum / rec.frames as f64,
            max_force_n: rec.force_max,
        };
        let body = serde_json::to_value(&entry).expect("entry is serialisable");
        self.log_record("recording", body.clone());
        self.event("recording_complete", body);
        self.index.push(entry).expect("frame sequence numbers only grow");
        let ev = WorkflowEvent::RecordingDone { view: rec.view, duration_s };
        if let Err(e) = self.advance_workflow(&ev) {
            self.log_record("rejected", json!({ "error": e.to_string() }));
        }
    }

    pub fn telemetry_payload(&self) -> Value {
        let s = &self.state;
        let q = &s.joints;
        let w = &self.workflow;
        json!({
            "tick": s.tick,
            "joints": {
                "x_mm": q.x_mm, "y_mm": q.y_mm, "z_mm": q.z_mm,
                "psi_rad": q.psi_rad, "phi_probe_rad": q.phi_probe_rad,
            },
            "tip_mm": s.pose.tip_mm,
            "axis": s.pose.axis,
            "force_n": s.force_n,
            "travel_mm": s.spring.travel_mm,
            "in_contact": s.spring.in_contact,
            "saturated": s.spring.saturated,
            "penetration_mm": finite(s.penetration_mm),
            "incidence_rad": s.incidence_rad,
            "breathing_offset_mm": self.sim.torso.breathing_offset(s.t_s),
            "posture": s.posture,
            "mode": self.controller.mode.as_str(),
            "safety": self.controller.last_verdict.as_str(),
            "estop_latched": self.controller.estop_latched,
            "workflow": {
                "phase": w.phase,
                "region": w.region,
                "side": w.side,
                "substate": w.substate,
                "completed": w.completed.len(),
            },
            "recording": self.recording.as_ref().map(|r| json!({ "view": r.view, "frames": r.frames })),
        })
    }

    /// Final summary; also written to the event log as `session_end`.
    pub fn finish(&mut self, reason: EndReason) -> Value {
        self.cancel_recording("session ended");
        let report = if self.workflow.phase.is_terminal() {
            session_report(&self.workflow, &self.index).ok()
        } else {
            None
        };
        let exit = self.exit_status(reason);
        let summary = json!({
            "reason": reason,
            "exit_code": exit,
            "seed": self.seed,
            "ticks": self.state.tick,
            "t_end_s": self.state.t_s,
            "phase": self.workflow.phase,
            "completed_views": self.workflow.completed.len(),
            "completion": self.workflow.completion_matrix(),
            "max_force_n": self.max_force_n,
            "estop_count": self.estop_count,
            "protocol": !self.workflow.free_scan,
            "abort_reason": self.workflow.abort_reason,
            "report": report,
            "recordings": self.index.entries,
        });
        self.log_record("session_end", json!({ "reason": reason, "exit_code": exit }));
        self.emit(MsgType::SessionComplete, summary.clone());
        summary
    }

    /// 0 complete without estop, 3 protocol violation or timeout, 4 any
    /// safety stop.
    pub fn exit_status(&self, reason: EndReason) -> i32 {
        if self.estop_count > 0 || (self.workflow.phase == Phase::Aborted && reason != EndReason::ProtocolViolation) {
            4
        } else if self.workflow.phase == Phase::Complete {
            0
        } else {
            3
        }
    }

    pub fn posture(&self) -> Posture {
        self.state.posture
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teleop::{Button, JogInput};

    fn engine() -> SessionEngine {
        SessionEngine::new(Config::default(), 1).unwrap()
    }

    fn cmd(kind: MsgType, payload: Value) -> Input {
        Input::Command(Message::with_payload(kind, 0, 0.0, payload))
    }

    fn run(e: &mut SessionEngine, secs: f64) {
        let n = (secs / e.sim.dt_s).round() as u64;
        for _ in 0..n {
            e.step();
        }
    }

    #[test]
    fn telemetry_rates() {
        let mut e = engine();
        run(&mut e, 1.0);
        let out = e.take_outbox();
        assert_eq!(out.iter().filter(|m| m.kind == MsgType::Telemetry).count(), 50);
        assert_eq!(e.take_log().telemetry.len(), 10);
        let ts: Vec<f64> = out.iter().map(|m| m.t_s).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn command_reflected_next_tick() {
        let mut e = engine();
        let jog = JogInput {
            stick_x: 1.0,
            ..Default::default()
        };
        e.apply(cmd(MsgType::Jog, serde_json::to_value(jog).unwrap())).unwrap();
        let x0 = e.state.joints.x_mm;
        e.step();
        assert!((e.state.joints.x_mm - x0 - 0.05).abs() < 1e-9);
    }

    #[test]
    fn disconnect_retracts_within_one_tick() {
        let mut e = engine();
        let down = JogInput {
            buttons: [Button::ZDown].into_iter().collect(),
            ..Default::default()
        };
        e.apply(cmd(MsgType::Jog, serde_json::to_value(down).unwrap())).unwrap();
        run(&mut e, 1.5);
        assert!(e.state.spring.in_contact);
        let z = e.state.joints.z_mm;
        e.apply(Input::OperatorDisconnected).unwrap();
        e.step();
        assert!(e.controller.estop_latched);
        assert!(e.state.joints.z_mm > z);
        assert_eq!(e.workflow.phase, Phase::Setup);
    }

    #[test]
    fn record_needs_the_right_state() {
        let mut e = engine();
        assert!(e.apply(cmd(MsgType::Record, json!({}))).is_err());
        let ev = json!({ "event": "contact_made" });
        assert!(e.apply(cmd(MsgType::WorkflowEvent, ev)).is_err());
    }

    #[test]
    fn vas_terminates() {
        let mut e = engine();
        run(&mut e, 0.1);
        e.apply(cmd(MsgType::Vas, json!({ "score": 5 }))).unwrap();
        assert_eq!(e.workflow.phase, Phase::Aborted);
        assert_eq!(e.workflow.abort_reason.as_deref(), Some("VAS termination"));
        assert!(e.controller.estop_latched);
        assert_eq!(e.exit_status(EndReason::Aborted), 4);
    }
}
