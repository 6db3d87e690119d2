//! Gantry kinematics: three prismatic axes carrying an end-effector that
//! rotates about the longitudinal axis (`psi`) and a probe that spins about
//! its own axis (`phi_probe`).
//!
//! The probe axis for end-effector angle `psi` is `(sin ψ, 0, −cos ψ)`:
//! `psi = 0` points straight down and positive `psi` swings the probe out to
//! world −x, where it points back at a subject-right surface.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{add, scale, sub, Vec3};
use crate::torso::Torso;

const LIMIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub psi_rad: f64,
    pub phi_probe_rad: f64,
}

/// Joint-space velocity, mm/s for translations and rad/s for rotations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVelocity {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub phi: f64,
}

impl JointVelocity {
    pub const ZERO: JointVelocity = JointVelocity {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        psi: 0.0,
        phi: 0.0,
    };

    pub fn scaled(self, k: f64) -> Self {
        Self {
            x: self.x * k,
            y: self.y * k,
            z: self.z * k,
            psi: self.psi * k,
            phi: self.phi * k,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// Clamp each component to its speed limit.
    pub fn rate_limited(self, translation: f64, rotation: f64) -> Self {
        let t = |v: f64| v.clamp(-translation, translation);
        let r = |v: f64| v.clamp(-rotation, rotation);
        Self {
            x: t(self.x),
            y: t(self.y),
            z: t(self.z),
            psi: r(self.psi),
            phi: r(self.phi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePose {
    pub tip_mm: Vec3,
    pub axis: Vec3,
    pub roll_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub x_range_mm: f64,
    pub y_range_mm: f64,
    pub z_range_mm: f64,
    pub psi_max_rad: f64,
    pub phi_max_rad: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            x_range_mm: 1000.0,
            y_range_mm: 500.0,
            z_range_mm: 350.0,
            psi_max_rad: FRAC_PI_2,
            phi_max_rad: PI,
        }
    }
}

/// Maps joint coordinates into the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MountFrame {
    /// World position of the end-effector pivot at zero joint translation.
    pub origin_mm: Vec3,
    /// Pivot to nominal (unloaded) probe tip.
    pub le_mm: f64,
}

impl Default for MountFrame {
    fn default() -> Self {
        Self {
            origin_mm: [0.0, 0.0, 0.0],
            le_mm: 120.0,
        }
    }
}

pub fn probe_axis(psi_rad: f64) -> Vec3 {
    let (s, c) = psi_rad.sin_cos();
    [s, 0.0, -c]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gantry {
    pub limits: JointLimits,
    pub mount: MountFrame,
    pub alpha_max_rad: f64,
}

impl Gantry {
    pub fn new(limits: JointLimits, mount: MountFrame, alpha_max_rad: f64) -> Self {
        Self {
            limits,
            mount,
            alpha_max_rad,
        }
    }

    pub fn clamp_joints(&self, q: JointState) -> JointState {
        let l = &self.limits;
        JointState {
            x_mm: q.x_mm.clamp(0.0, l.x_range_mm),
            y_mm: q.y_mm.clamp(0.0, l.y_range_mm),
            z_mm: q.z_mm.clamp(0.0, l.z_range_mm),
            psi_rad: q.psi_rad.clamp(-l.psi_max_rad, l.psi_max_rad),
            phi_probe_rad: q.phi_probe_rad.clamp(-l.phi_max_rad, l.phi_max_rad),
        }
    }

    pub fn within_limits(&self, q: &JointState) -> bool {
        let l = &self.limits;
        let inside = |v: f64, lo: f64, hi: f64| v >= lo - LIMIT_EPS && v <= hi + LIMIT_EPS;
        inside(q.x_mm, 0.0, l.x_range_mm)
            && inside(q.y_mm, 0.0, l.y_range_mm)
            && inside(q.z_mm, 0.0, l.z_range_mm)
            && inside(q.psi_rad, -l.psi_max_rad, l.psi_max_rad)
            && inside(q.phi_probe_rad, -l.phi_max_rad, l.phi_max_rad)
    }

    pub fn mount_position(&self, q: &JointState) -> Vec3 {
        add(self.mount.origin_mm, [q.x_mm, q.y_mm, q.z_mm])
    }

    /// Rigid pose of the probe: no passive deflection.
    pub fn forward_kinematics(&self, q: &JointState) -> Result<ProbePose> {
        if !self.within_limits(q) {
            return Err(Error::Domain(format!("joint state outside limits: {q:?}")));
        }
        Ok(self.forward_unchecked(q))
    }

    pub(crate) fn forward_unchecked(&self, q: &JointState) -> ProbePose {
        let axis = probe_axis(q.psi_rad);
        ProbePose {
            tip_mm: add(self.mount_position(q), scale(axis, self.mount.le_mm)),
            axis,
            roll_rad: q.phi_probe_rad,
        }
    }

    /// Whether a joint state within limits puts the probe tip on `point` with
    /// the probe along the inward surface normal nearest to it.
    pub fn reachable(&self, torso: &Torso, point: Vec3) -> bool {
        if point.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let alpha = torso.nearest_alpha(point, 0.0);
        let psi = torso.normal_tilt(alpha, 0.0);
        if psi.abs() > self.limits.psi_max_rad + LIMIT_EPS {
            return false;
        }
        let mount = sub(point, scale(probe_axis(psi), self.mount.le_mm));
        let j = sub(mount, self.mount.origin_mm);
        self.within_limits(&JointState {
            x_mm: j[0],
            y_mm: j[1],
            z_mm: j[2],
            psi_rad: psi,
            phi_probe_rad: 0.0,
        })
    }

    fn check_alpha(&self, alpha_rad: f64) -> Result<()> {
        if alpha_rad.abs() > self.alpha_max_rad || !alpha_rad.is_finite() {
            return Err(Error::Reach {
                alpha_rad,
                alpha_max_rad: self.alpha_max_rad,
            });
        }
        Ok(())
    }

    fn torso_y(&self, torso: &Torso, current: &JointState) -> f64 {
        self.mount.origin_mm[1] + current.y_mm - torso.center_mm[1]
    }

    /// Joints placing the probe tip `standoff_mm` outside the surface at
    /// angle `alpha_rad` (negative standoff: rigid tip pressed in), probe
    /// along the inward normal. `y` and probe roll are kept from `current`.
    pub fn arc_solve(
        &self,
        torso: &Torso,
        alpha_rad: f64,
        standoff_mm: f64,
        current: &JointState,
        t_s: f64,
    ) -> Result<JointState> {
        self.check_alpha(alpha_rad)?;
        let sp = torso.surface_point(alpha_rad, self.torso_y(torso, current), t_s)?;
        let psi = torso.normal_tilt(alpha_rad, t_s);
        let axis = probe_axis(psi);
        let tip = sub(sp.point_mm, scale(axis, standoff_mm));
        let mount = sub(tip, scale(axis, self.mount.le_mm));
        let j = sub(mount, self.mount.origin_mm);
        let q = JointState {
            x_mm: j[0],
            y_mm: current.y_mm,
            z_mm: j[2],
            psi_rad: psi,
            phi_probe_rad: current.phi_probe_rad,
        };
        if !self.within_limits(&q) {
            return Err(Error::Domain(format!(
                "arc position α={alpha_rad:.4} leaves the joint limits: {q:?}"
            )));
        }
        Ok(q)
    }

    /// Derivative of [`Gantry::arc_solve`] with respect to `alpha`.
    pub fn arc_tangent(
        &self,
        torso: &Torso,
        alpha_rad: f64,
        standoff_mm: f64,
        t_s: f64,
    ) -> JointVelocity {
        let (a, b) = torso.semi_axes_at(t_s);
        let (s, c) = alpha_rad.sin_cos();
        // surface point derivative, world = center + (−u, y, v)
        let dp = [-a * c, 0.0, -b * s];
        let p = s / a;
        let q = c / b;
        let dpsi = 1.0 / (a * b * (p * p + q * q));
        let psi = p.atan2(q);
        let (sp, cp) = psi.sin_cos();
        let dn = [cp * dpsi, 0.0, sp * dpsi];
        let lever = standoff_mm + self.mount.le_mm;
        JointVelocity {
            x: dp[0] - lever * dn[0],
            y: 0.0,
            z: dp[2] - lever * dn[2],
            psi: dpsi,
            phi: 0.0,
        }
    }
}
