//! Fixed-timestep plant: gantry joints, passive spring and the breathing
//! torso, advanced one physics tick at a time.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::endeffector::{contact_force, spring_state_update, SpringParams, SpringState};
use crate::geom::{add, dot, norm, scale, Vec3};
use crate::kinematics::{Gantry, JointState, JointVelocity, ProbePose};
use crate::torso::{Posture, Torso};

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub tick: u64,
    pub t_s: f64,
    pub joints: JointState,
    pub spring: SpringState,
    pub force_n: f64,
    /// Pose after passive deflection: the tip rests on the surface while in contact.
    pub pose: ProbePose,
    /// Penetration of the rigid tip past the surface along the probe axis
    /// (negative: gap ahead of the probe; −∞ when the axis misses the torso).
    pub penetration_mm: f64,
    /// Inward surface normal at the contact point, when in contact.
    pub contact_normal: Option<Vec3>,
    pub incidence_rad: f64,
    pub posture: Posture,
    pub rng_seed: u64,
}

/// Contact of the probe axis line with the torso.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisContact {
    pub penetration_mm: f64,
    pub entry_mm: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimits {
    pub translation_mm_s: f64,
    pub rotation_rad_s: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub torso: Torso,
    pub gantry: Gantry,
    pub spring: SpringParams,
    pub speeds: SpeedLimits,
    pub dt_s: f64,
}

/// Angle between the probe axis and the inward surface normal; 0 when the
/// probe is perpendicular to the skin.
pub fn incidence_angle(axis: Vec3, inward_normal: Vec3) -> f64 {
    let c = [
        axis[1] * inward_normal[2] - axis[2] * inward_normal[1],
        axis[2] * inward_normal[0] - axis[0] * inward_normal[2],
        axis[0] * inward_normal[1] - axis[1] * inward_normal[0],
    ];
    norm(c).atan2(dot(axis, inward_normal).abs())
}

impl Simulator {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            torso: cfg.torso(),
            gantry: cfg.gantry(),
            spring: cfg.spring.params(),
            speeds: SpeedLimits {
                translation_mm_s: cfg.speeds.translation_mm_s,
                rotation_rad_s: cfg.speeds.rotation_rad_s,
            },
            dt_s: cfg.sim.dt_s,
        }
    }

    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.dt_s
    }

    pub fn initial_state(&self, joints: JointState, seed: u64) -> SimState {
        let joints = self.gantry.clamp_joints(joints);
        self.evaluate(0, joints, Posture::Supine, seed)
    }

    /// Where the probe axis line first enters the torso at time `t_s`.
    pub fn axis_contact(&self, rigid: &ProbePose, t_s: f64) -> Option<AxisContact> {
        let torso = &self.torso;
        let (u0, y, v0) = torso.world_to_section(rigid.tip_mm);
        if !torso.y_in_range(y) {
            return None;
        }
        let (a, b) = torso.semi_axes_at(t_s);
        // section direction of the world axis (x flips)
        let (du, dv) = (-rigid.axis[0], rigid.axis[2]);
        let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
        let qa = du * du * ia + dv * dv * ib;
        let qb = 2.0 * (u0 * du * ia + v0 * dv * ib);
        let qc = u0 * u0 * ia + v0 * v0 * ib - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if qa == 0.0 || disc < 0.0 {
            return None;
        }
        // numerically stable smaller root
        let sq = disc.sqrt();
        let q = -0.5 * (qb + qb.signum() * sq);
        let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / qa, qc / q) };
        let s_entry = r1.min(r2);
        let entry = add(rigid.tip_mm, scale(rigid.axis, s_entry));
        let (ue, _, ve) = torso.world_to_section(entry);
        let (gu, gv) = (ue * ia, ve * ib);
        let n = gu.hypot(gv);
        Some(AxisContact {
            penetration_mm: -s_entry,
            entry_mm: entry,
            normal: [gu / n, 0.0, -gv / n],
        })
    }

    fn evaluate(&self, tick: u64, joints: JointState, posture: Posture, seed: u64) -> SimState {
        let t_s = self.time_of(tick);
        let rigid = self.gantry.forward_unchecked(&joints);
        let contact = self.axis_contact(&rigid, t_s);
        let penetration = contact.map_or(f64::NEG_INFINITY, |c| c.penetration_mm);
        let spring = spring_state_update(&self.spring, penetration);
        let force_n = contact_force(&self.spring, &spring);
        let (pose, contact_normal, incidence_rad) = match contact {
            Some(c) if spring.in_contact => (
                ProbePose {
                    tip_mm: c.entry_mm,
                    ..rigid
                },
                Some(c.normal),
                incidence_angle(rigid.axis, c.normal),
            ),
            _ => (rigid, None, 0.0),
        };
        SimState {
            tick,
            t_s,
            joints,
            spring,
            force_n,
            pose,
            penetration_mm: penetration,
            contact_normal,
            incidence_rad,
            posture,
            rng_seed: seed,
        }
    }

    /// One physics tick: integrate the (rate-limited) joint velocities,
    /// clamp to the joint ranges and resolve contact at the new time.
    pub fn step(&self, state: &SimState, command: JointVelocity) -> SimState {
        let v = command.rate_limited(self.speeds.translation_mm_s, self.speeds.rotation_rad_s);
        let dt = self.dt_s;
        let q = &state.joints;
        let next = self.gantry.clamp_joints(JointState {
            x_mm: q.x_mm + v.x * dt,
            y_mm: q.y_mm + v.y * dt,
            z_mm: q.z_mm + v.z * dt,
            psi_rad: q.psi_rad + v.psi * dt,
            phi_probe_rad: q.phi_probe_rad + v.phi * dt,
        });
        self.evaluate(state.tick + 1, next, state.posture, state.rng_seed)
    }

    pub fn with_posture(&self, state: &SimState, posture: Posture) -> SimState {
        SimState {
            posture,
            ..state.clone()
        }
    }

    /// Signed distance of the rigid (undeflected) tip from the surface.
    pub fn rigid_clearance(&self, state: &SimState) -> f64 {
        let rigid = self.gantry.forward_unchecked(&state.joints);
        self.torso.signed_distance(rigid.tip_mm, state.t_s)
    }
}
