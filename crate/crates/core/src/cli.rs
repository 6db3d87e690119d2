//! Headless entry points shared by the `lus` binary, the examples and the
//! tests: scripted sessions and the workspace check.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frame::View;
use crate::kinematics::JointState;
use crate::protocol::log::{Manifest, SessionLog};
use crate::protocol::message::SeqTracker;
use crate::protocol::session::{EndReason, Input, SessionEngine};
use crate::script::SessionScript;
use crate::torso::{Posture, Side, Torso, TorsoDims};
use crate::workflow::ORDER;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_SAFETY: i32 = 4;

/// Exit code for a failure before or outside the session itself.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_PROTOCOL,
    }
}

/// Log buffers are flushed to disk at this tick interval.
const FLUSH_EVERY: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub reason: EndReason,
    pub summary: Value,
    /// First rejected script line, if any.
    pub violation: Option<String>,
}

fn drain(engine: &mut SessionEngine, log: &mut SessionLog) -> Result<()> {
    engine.take_outbox();
    log.write(engine.take_log())
}

/// Feed `script` to an in-process session and write the full log to
/// `out_dir`. The first rejected message ends the session; otherwise it
/// runs until the workflow finishes or `session.timeout_s` of simulated
/// time passes after the last message.
pub fn run_session(cfg: &Config, script: &SessionScript, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let seed = script.seed.unwrap_or(cfg.sim.seed);
    let mut engine = SessionEngine::new(cfg.clone(), seed)?;
    let manifest = Manifest::new(cfg.clone(), seed, script.label.clone());
    let mut log = SessionLog::create(out_dir, &manifest)?;
    let dt = cfg.sim.dt_s;
    let mut seq = SeqTracker::default();
    let mut violation = None;

    for msg in &script.messages {
        let due = (msg.t_s / dt).round() as u64;
        while engine.tick() < due && !engine.is_over() {
            engine.step();
            if engine.tick() % FLUSH_EVERY == 0 {
                drain(&mut engine, &mut log)?;
            }
        }
        if engine.is_over() {
            break;
        }
        let accepted = seq
            .accept(msg.seq)
            .and_then(|_| engine.apply(Input::Command(msg.clone())));
        if let Err(e) = accepted {
            violation = Some(format!("seq {} ({}): {e}", msg.seq, msg.kind.as_str()));
            break;
        }
    }

    if violation.is_none() {
        let deadline = engine.tick() + (cfg.session.timeout_s / dt).round() as u64;
        while !engine.is_over() && engine.tick() < deadline {
            engine.step();
            if engine.tick() % FLUSH_EVERY == 0 {
                drain(&mut engine, &mut log)?;
            }
        }
    }

    let reason = match (&violation, engine.workflow.phase) {
        (Some(_), _) => EndReason::ProtocolViolation,
        (None, crate::workflow::Phase::Complete) => EndReason::Complete,
        (None, crate::workflow::Phase::Aborted) => EndReason::Aborted,
        (None, _) => EndReason::Timeout,
    };
    let mut summary = engine.finish(reason);
    if let Some(v) = &violation {
        summary["violation"] = Value::String(v.clone());
    }
    drain(&mut engine, &mut log)?;
    log.finish(&summary)?;
    Ok(RunOutcome {
        exit_code: engine.exit_status(reason),
        reason,
        summary,
        violation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorsoSize {
    MinusSd,
    Mean,
    PlusSd,
}

impl TorsoSize {
    pub const ALL: [TorsoSize; 3] = [TorsoSize::MinusSd, TorsoSize::Mean, TorsoSize::PlusSd];

    pub fn sd_shift(self) -> f64 {
        match self {
            TorsoSize::MinusSd => -1.0,
            TorsoSize::Mean => 0.0,
            TorsoSize::PlusSd => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TorsoSize::MinusSd => "mean-1sd",
            TorsoSize::Mean => "mean",
            TorsoSize::PlusSd => "mean+1sd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRow {
    pub torso: TorsoSize,
    pub dims: TorsoDims,
    pub region: u8,
    pub side: Side,
    pub view: View,
    pub alpha_rad: f64,
    pub y_mm: f64,
    pub reachable: bool,
    /// Joints placing the probe on the anchor, when within limits.
    pub joints: Option<JointState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceTable {
    pub rows: Vec<WorkspaceRow>,
}

impl WorkspaceTable {
    /// (reachable, total) for one torso size.
    pub fn count(&self, size: TorsoSize) -> (usize, usize) {
        let rows = self.rows.iter().filter(|r| r.torso == size);
        let total = rows.clone().count();
        (rows.filter(|r| r.reachable).count(), total)
    }

    pub fn all_reachable(&self) -> bool {
        self.rows.iter().all(|r| r.reachable)
    }
}

impl fmt::Display for WorkspaceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<9} {:>6} {:>5} {:<13} {:>8} {:>7}  {:<9} joints (x, y, z mm; psi rad)", "torso", "region", "side", "view", "alpha", "y_mm", "reach")?;
        for r in &self.rows {
            let joints = r.joints.map_or_else(String::new, |q| {
                format!("({:.1}, {:.1}, {:.1}; {:.3})", q.x_mm, q.y_mm, q.z_mm, q.psi_rad)
            });
            writeln!(
                f,
                "{:<9} {:>6} {:>5} {:<13} {:>8.4} {:>7.1}  {:<9} {}",
                r.torso.as_str(),
                r.region,
                r.side.as_str(),
                r.view.as_str(),
                r.alpha_rad,
                r.y_mm,
                if r.reachable { "yes" } else { "NO" },
                joints
            )?;
        }
        for size in TorsoSize::ALL {
            let (ok, n) = self.count(size);
            writeln!(f, "{}: {ok}/{n} reachable", size.as_str())?;
        }
        Ok(())
    }
}

/// Reachability of every (region, side, view) scan target for torsos at the
/// configured dims and ±1 SD. Anchor positions along the chest scale with
/// its length. The probe sits on the resting surface along
/// the inward normal, rolled to the view angle.
pub fn workspace_check(cfg: &Config) -> Result<WorkspaceTable> {
    cfg.validate()?;
    let gantry = cfg.gantry();
    let mut rows = Vec::new();
    for size in TorsoSize::ALL {
        let dims = cfg.torso.dims().shifted_by_sd(size.sd_shift());
        let torso = Torso::new(dims, crate::torso::BreathingModel::breath_hold(), cfg.torso.center_mm)
            .with_anchors(cfg.regions.clone());
        for &(region, side) in ORDER.iter() {
            let mut anchor = torso.region_anchor(region, side, Posture::required_for(region))?;
            // anchors are laid out on the configured torso and scale with chest length
            anchor.y_mm *= dims.height_mm / cfg.torso.height_mm;
            for view in View::BOTH {
                let current = JointState {
                    y_mm: torso.center_mm[1] + anchor.y_mm - cfg.endeffector.origin_mm[1],
                    phi_probe_rad: view.probe_angle_rad(),
                    ..JointState::default()
                };
                let joints = gantry.arc_solve(&torso, anchor.alpha_rad, 0.0, &current, 0.0).ok();
                let point = torso.surface_point(anchor.alpha_rad, anchor.y_mm, 0.0)?.point_mm;
                rows.push(WorkspaceRow {
                    torso: size,
                    dims,
                    region,
                    side,
                    view,
                    alpha_rad: anchor.alpha_rad,
                    y_mm: anchor.y_mm,
                    reachable: joints.is_some() && gantry.reachable(&torso, point),
                    joints,
                });
            }
        }
    }
    Ok(WorkspaceTable { rows })
}
