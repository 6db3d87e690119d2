//! Operator input mapping, the two control modes and the force-safety
//! envelope.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{dot, sub};
use crate::kinematics::{JointState, JointVelocity};
use crate::sim::{SimState, Simulator};
use crate::torso::Torso;

/// Gain of the position loop that keeps arc motion on the surface.
const ARC_GAIN_PER_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[default]
    EachAxis,
    ArcMotion,
}

impl ControlMode {
    pub fn toggled(self) -> Self {
        match self {
            ControlMode::EachAxis => ControlMode::ArcMotion,
            ControlMode::ArcMotion => ControlMode::EachAxis,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::EachAxis => "each_axis",
            ControlMode::ArcMotion => "arc_motion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Button {
    ZUp,
    ZDown,
    PsiCw,
    PsiCcw,
    ProbeCw,
    ProbeCcw,
    Record,
    ModeToggle,
    Estop,
}

impl Button {
    /// Buttons that act once per press rather than while held.
    pub fn is_edge_triggered(self) -> bool {
        matches!(self, Button::Record | Button::ModeToggle | Button::Estop)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct JogInput {
    pub stick_x: f64,
    pub stick_y: f64,
    pub buttons: BTreeSet<Button>,
}

impl JogInput {
    /// Clamp sticks to [−1, 1]; non-finite values read as centred.
    pub fn sanitized(&self) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Self {
            stick_x: c(self.stick_x),
            stick_y: c(self.stick_y),
            buttons: self.buttons.clone(),
        }
    }

    fn axis(&self, plus: Button, minus: Button) -> f64 {
        (self.buttons.contains(&plus) as i8 - self.buttons.contains(&minus) as i8) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopLimits {
    pub translation_mm_s: f64,
    pub rotation_rad_s: f64,
    pub arc_rate_max: f64,
}

impl TeleopLimits {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            translation_mm_s: cfg.speeds.translation_mm_s,
            rotation_rad_s: cfg.speeds.rotation_rad_s,
            arc_rate_max: cfg.arc.rate_max,
        }
    }
}

/// Velocity command for one input sample. In arc mode `arc_tangent` is the
/// derivative of the arc solution at the current arc angle; without it the
/// arc command is zero.
pub fn map_input(
    input: &JogInput,
    mode: ControlMode,
    limits: &TeleopLimits,
    arc_tangent: Option<&JointVelocity>,
) -> JointVelocity {
    let input = input.sanitized();
    let vt = limits.translation_mm_s;
    let vr = limits.rotation_rad_s;
    let phi = input.axis(Button::ProbeCcw, Button::ProbeCw) * vr;
    match mode {
        ControlMode::EachAxis => JointVelocity {
            x: input.stick_x * vt,
            y: input.stick_y * vt,
            z: input.axis(Button::ZUp, Button::ZDown) * vt,
            psi: input.axis(Button::PsiCcw, Button::PsiCw) * vr,
            phi,
        },
        ControlMode::ArcMotion => {
            let rate = input.stick_x * limits.arc_rate_max;
            let mut v = arc_tangent.map_or(JointVelocity::ZERO, |t| t.scaled(rate));
            v.phi += phi;
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyLevel {
    Ok,
    Warn,
    Estop,
}

impl SafetyLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SafetyLevel::Ok => "ok",
            SafetyLevel::Warn => "warn",
            SafetyLevel::Estop => "estop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub level: SafetyLevel,
    pub reason: String,
    pub force_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyThresholds {
    pub warn_n: f64,
    pub estop_n: f64,
    pub clearance_mm: f64,
}

impl Default for SafetyThresholds {
    fn default() -> Self {
        Self {
            warn_n: 15.0,
            estop_n: 20.0,
            clearance_mm: 20.0,
        }
    }
}

impl SafetyThresholds {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            warn_n: cfg.safety.warn_n,
            estop_n: cfg.safety.estop_n,
            clearance_mm: cfg.safety.clearance_mm,
        }
    }
}

pub fn safety_check(force_n: f64, spring: &crate::endeffector::SpringState, th: &SafetyThresholds) -> SafetyVerdict {
    let (level, reason) = if force_n >= th.estop_n {
        (SafetyLevel::Estop, format!("force {force_n:.2} N at or above {} N", th.estop_n))
    } else if spring.saturated {
        (SafetyLevel::Estop, "passive travel saturated".to_string())
    } else if force_n >= th.warn_n {
        (SafetyLevel::Warn, format!("force {force_n:.2} N at or above {} N", th.warn_n))
    } else {
        (SafetyLevel::Ok, String::new())
    };
    SafetyVerdict { level, reason, force_n }
}

/// Apply a verdict to a command: warn drops any descent, estop drops
/// everything (the retract command comes from [`estop_retract`]).
pub fn safety_filter(cmd: JointVelocity, level: SafetyLevel) -> JointVelocity {
    match level {
        SafetyLevel::Ok => cmd,
        SafetyLevel::Warn => JointVelocity {
            z: cmd.z.max(0.0),
            ..cmd
        },
        SafetyLevel::Estop => JointVelocity::ZERO,
    }
}

/// Straight-up retreat at full speed until the rigid tip is clear of the
/// surface by the configured clearance or the z axis tops out.
pub fn estop_retract(sim: &Simulator, state: &SimState, th: &SafetyThresholds, speed_mm_s: f64) -> JointVelocity {
    let clear = !state.spring.in_contact && sim.rigid_clearance(state) >= th.clearance_mm;
    if clear || state.joints.z_mm >= sim.gantry.limits.z_range_mm {
        JointVelocity::ZERO
    } else {
        JointVelocity {
            z: speed_mm_s,
            ..JointVelocity::ZERO
        }
    }
}

/// Patient discomfort report on the 0–10 visual analog scale.
pub fn vas_report(score: f64) -> Result<SafetyVerdict> {
    if !(0.0..=10.0).contains(&score) || score.fract() != 0.0 {
        return Err(Error::Input(format!("VAS score {score} is not an integer in 0..=10")));
    }
    Ok(if score > 4.0 {
        SafetyVerdict {
            level: SafetyLevel::Estop,
            reason: "VAS termination".into(),
            force_n: f64::NAN,
        }
    } else {
        SafetyVerdict {
            level: SafetyLevel::Ok,
            reason: String::new(),
            force_n: f64::NAN,
        }
    })
}

/// Arc-mode position along the breath-hold surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcTrack {
    pub alpha_rad: f64,
    pub standoff_mm: f64,
    pub goto_alpha_rad: Option<f64>,
}

/// Pressed edge-triggered buttons reported back to the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ButtonEdge {
    ModeToggle,
    Record,
    Estop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub limits: TeleopLimits,
    pub thresholds: SafetyThresholds,
    pub mode: ControlMode,
    pub estop_latched: bool,
    pub estop_reason: Option<String>,
    pub input: JogInput,
    pub arc: Option<ArcTrack>,
    pub probe_target_rad: Option<f64>,
    pub last_verdict: SafetyLevel,
}

impl Controller {
    pub fn new(limits: TeleopLimits, thresholds: SafetyThresholds) -> Self {
        Self {
            limits,
            thresholds,
            mode: ControlMode::EachAxis,
            estop_latched: false,
            estop_reason: None,
            input: JogInput::default(),
            arc: None,
            probe_target_rad: None,
            last_verdict: SafetyLevel::Ok,
        }
    }

    pub fn from_config(cfg: &Config) -> Self {
        Self::new(TeleopLimits::from_config(cfg), SafetyThresholds::from_config(cfg))
    }

    /// Replace the held input (last writer wins) and return newly pressed
    /// edge-triggered buttons.
    pub fn apply_jog(&mut self, input: JogInput) -> Vec<ButtonEdge> {
        let input = input.sanitized();
        let mut edges = Vec::new();
        for (b, e) in [
            (Button::ModeToggle, ButtonEdge::ModeToggle),
            (Button::Record, ButtonEdge::Record),
            (Button::Estop, ButtonEdge::Estop),
        ] {
            if input.buttons.contains(&b) && !self.input.buttons.contains(&b) {
                edges.push(e);
            }
        }
        if input.stick_x != 0.0 {
            if let Some(a) = self.arc.as_mut() {
                a.goto_alpha_rad = None;
            }
        }
        if input.buttons.contains(&Button::ProbeCw) || input.buttons.contains(&Button::ProbeCcw) {
            self.probe_target_rad = None;
        }
        self.input = input;
        edges
    }

    pub fn set_mode(&mut self, mode: ControlMode) {
        if mode != self.mode {
            self.mode = mode;
            self.arc = None;
        }
    }

    pub fn latch_estop(&mut self, reason: impl Into<String>) {
        if !self.estop_latched {
            self.estop_latched = true;
            self.estop_reason = Some(reason.into());
        }
        self.arc = None;
        self.probe_target_rad = None;
    }

    /// Clear the latch; the control mode is kept.
    pub fn reset(&mut self) {
        self.estop_latched = false;
        self.estop_reason = None;
        self.input = JogInput::default();
    }

    /// Start a move along the arc to `alpha_rad`, switching to arc mode.
    pub fn goto_arc(&mut self, sim: &Simulator, state: &SimState, alpha_rad: f64) -> Result<()> {
        let limit = sim.gantry.alpha_max_rad;
        if !alpha_rad.is_finite() || alpha_rad.abs() > limit {
            return Err(Error::Reach {
                alpha_rad,
                alpha_max_rad: limit,
            });
        }
        self.set_mode(ControlMode::ArcMotion);
        let mut track = self.arc.unwrap_or_else(|| arc_track_from(sim, state));
        track.goto_alpha_rad = Some(alpha_rad);
        self.arc = Some(track);
        Ok(())
    }

    pub fn rotate_probe_to(&mut self, sim: &Simulator, target_rad: f64) -> Result<()> {
        let lim = sim.gantry.limits.phi_max_rad;
        if !target_rad.is_finite() || target_rad.abs() > lim {
            return Err(Error::Input(format!("probe angle {target_rad} outside ±{lim}")));
        }
        self.probe_target_rad = Some(target_rad);
        Ok(())
    }

    /// Safety-filtered joint velocity for the next physics tick.
    pub fn command(&mut self, sim: &Simulator, state: &SimState) -> JointVelocity {
        let verdict = safety_check(state.force_n, &state.spring, &self.thresholds);
        self.last_verdict = verdict.level;
        if verdict.level == SafetyLevel::Estop {
            self.latch_estop(verdict.reason);
        }
        if self.estop_latched {
            return estop_retract(sim, state, &self.thresholds, self.limits.translation_mm_s);
        }
        let mut v = match self.mode {
            ControlMode::EachAxis => map_input(&self.input, self.mode, &self.limits, None),
            ControlMode::ArcMotion => self.arc_command(sim, state),
        };
        if let Some(target) = self.probe_target_rad {
            let err = target - state.joints.phi_probe_rad;
            let step = self.limits.rotation_rad_s * sim.dt_s;
            if err.abs() <= 1e-12 {
                self.probe_target_rad = None;
            } else {
                v.phi = if err.abs() <= step { err / sim.dt_s } else { err.signum() * self.limits.rotation_rad_s };
            }
        }
        safety_filter(v, verdict.level)
    }

    fn arc_command(&mut self, sim: &Simulator, state: &SimState) -> JointVelocity {
        let mut track = self.arc.unwrap_or_else(|| arc_track_from(sim, state));
        let limit = sim.gantry.alpha_max_rad;
        let dt = sim.dt_s;
        let rate = match track.goto_alpha_rad {
            Some(goal) => {
                let err = goal - track.alpha_rad;
                let max = self.limits.arc_rate_max;
                if err.abs() <= max * dt {
                    track.goto_alpha_rad = None;
                    err / dt
                } else {
                    err.signum() * max
                }
            }
            None => self.input.sanitized().stick_x * self.limits.arc_rate_max,
        };
        let next = (track.alpha_rad + rate * dt).clamp(-limit, limit);
        let rate = (next - track.alpha_rad) / dt;
        track.alpha_rad = next;
        self.arc = Some(track);

        let hold = sim.torso.breath_hold();
        let tangent = sim.gantry.arc_tangent(&hold, next, track.standoff_mm, state.t_s);
        let mut input = self.input.sanitized();
        input.stick_x = if self.limits.arc_rate_max > 0.0 { rate / self.limits.arc_rate_max } else { 0.0 };
        let ff = map_input(&input, ControlMode::ArcMotion, &self.limits, Some(&tangent));
        match sim.gantry.arc_solve(&hold, next, track.standoff_mm, &state.joints, state.t_s) {
            Ok(target) => {
                let q = &state.joints;
                JointVelocity {
                    x: ff.x + ARC_GAIN_PER_S * (target.x_mm - q.x_mm),
                    y: 0.0,
                    z: ff.z + ARC_GAIN_PER_S * (target.z_mm - q.z_mm),
                    psi: ff.psi + ARC_GAIN_PER_S * (target.psi_rad - q.psi_rad),
                    phi: ff.phi,
                }
            }
            Err(_) => JointVelocity {
                phi: ff.phi,
                ..JointVelocity::ZERO
            },
        }
    }
}

/// Arc position matching the current probe orientation: the angle whose
/// surface normal has the probe's tilt, and the rigid tip's offset along
/// that normal.
pub fn arc_track_from(sim: &Simulator, state: &SimState) -> ArcTrack {
    let hold = sim.torso.breath_hold();
    arc_track_for(sim, &hold, &state.joints)
}

fn arc_track_for(sim: &Simulator, hold: &Torso, q: &JointState) -> ArcTrack {
    let limit = sim.gantry.alpha_max_rad;
    let alpha = hold.alpha_for_tilt(q.psi_rad, 0.0).clamp(-limit, limit);
    let rigid = sim.gantry.forward_unchecked(q);
    let y = rigid.tip_mm[1] - hold.center_mm[1];
    let y = y.clamp(-hold.dims.height_mm / 2.0, hold.dims.height_mm / 2.0);
    let standoff = match hold.surface_point(alpha, y, 0.0) {
        Ok(sp) => dot(sub(sp.point_mm, rigid.tip_mm), rigid.axis),
        Err(_) => 0.0,
    };
    ArcTrack {
        alpha_rad: alpha,
        standoff_mm: standoff,
        goto_alpha_rad: None,
    }
}
