//! Patient chest model: a breathing elliptical cylinder lying along the
//! gantry's longitudinal (y) axis, plus the ten scan-region anchors.
//!
//! Cross-section coordinates `(u, v)` are torso-local: `u` is the lateral
//! offset toward the subject's right, `v` the anterior offset. A surface
//! angle `alpha` is measured from the upward apex, so that
//! `(u, v) = ((a + Δ) sin α, (b + Δ) cos α)` with `a`, `b` the half width
//! and half depth and `Δ` the breathing dilation.
//!
//! The world frame has its origin at the gantry corner, x transverse,
//! y cranio-caudal, z vertical. A supine subject lies head toward +y, so the
//! subject's right is world −x: `world = center + (−u, y, v)`. Prone scanning
//! flips the subject about the long axis; the surface is identical and only
//! the anchor table changes (the subject's right moves to positive α).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Anthropometric standard deviations of [`TorsoDims::default`].
pub const TORSO_SD: TorsoDims = TorsoDims {
    width_mm: 17.1,
    depth_mm: 16.5,
    height_mm: 19.9,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsoDims {
    pub width_mm: f64,
    pub depth_mm: f64,
    pub height_mm: f64,
}

impl Default for TorsoDims {
    fn default() -> Self {
        Self {
            width_mm: 311.4,
            depth_mm: 315.5,
            height_mm: 209.7,
        }
    }
}

impl TorsoDims {
    /// Mean dimensions shifted by `k` standard deviations on every axis.
    pub fn shifted_by_sd(&self, k: f64) -> Self {
        Self {
            width_mm: self.width_mm + k * TORSO_SD.width_mm,
            depth_mm: self.depth_mm + k * TORSO_SD.depth_mm,
            height_mm: self.height_mm + k * TORSO_SD.height_mm,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            width_mm: self.width_mm * factor,
            depth_mm: self.depth_mm * factor,
            height_mm: self.height_mm * factor,
        }
    }

    /// Half width `a` and half depth `b`.
    pub fn semi_axes(&self) -> (f64, f64) {
        (self.width_mm / 2.0, self.depth_mm / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width_mm", self.width_mm),
            ("depth_mm", self.depth_mm),
            ("height_mm", self.height_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("torso.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sinusoidal uniform radial dilation of the cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreathingModel {
    pub amplitude_mm: f64,
    pub period_s: f64,
    pub phase_rad: f64,
    pub enabled: bool,
}

impl Default for BreathingModel {
    fn default() -> Self {
        Self {
            amplitude_mm: 5.0,
            period_s: 4.0,
            phase_rad: 0.0,
            enabled: true,
        }
    }
}

impl BreathingModel {
    pub fn breath_hold() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Radial displacement at time `t_s`; zero during breath hold.
    pub fn offset(&self, t_s: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.amplitude_mm * (2.0 * PI * t_s / self.period_s + self.phase_rad).sin()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_mm >= 0.0) {
            return Err(Error::Config("breathing.amplitude_mm must be >= 0".into()));
        }
        if !(self.period_s > 0.0) {
            return Err(Error::Config("breathing.period_s must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Right, Side::Left];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Right => 0,
            Side::Left => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    Supine,
    Prone,
}

impl Posture {
    /// Regions 1–4 are scanned supine, region 5 prone.
    pub fn required_for(region_id: u8) -> Posture {
        if region_id == 5 {
            Posture::Prone
        } else {
            Posture::Supine
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionAnchor {
    pub region_id: u8,
    pub side: Side,
    pub posture: Posture,
    pub alpha_rad: f64,
    pub y_mm: f64,
}

/// Default anchor table. Anterior regions sit at |α| = 0.2π, lateral ones at
/// 0.45π, superior regions toward +y. Region 5 lies on the apex band of the
/// flipped (prone) torso, where the subject's right is at negative α.
pub fn default_anchors() -> Vec<RegionAnchor> {
    let mut out = Vec::with_capacity(10);
    for side in Side::BOTH {
        let s = match side {
            Side::Right => 1.0,
            Side::Left => -1.0,
        };
        let supine = [
            (1, 0.20 * PI, 50.0),
            (2, 0.20 * PI, -50.0),
            (3, 0.45 * PI, 40.0),
            (4, 0.45 * PI, -40.0),
        ];
        for (id, alpha, y) in supine {
            out.push(RegionAnchor {
                region_id: id,
                side,
                posture: Posture::Supine,
                alpha_rad: s * alpha,
                y_mm: y,
            });
        }
        out.push(RegionAnchor {
            region_id: 5,
            side,
            posture: Posture::Prone,
            alpha_rad: -s * 0.15 * PI,
            y_mm: 0.0,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub alpha_rad: f64,
    pub y_mm: f64,
    /// Torso-local cross-section point `(u, v)`.
    pub section_mm: [f64; 2],
    /// Inward unit normal in cross-section coordinates.
    pub section_normal: [f64; 2],
    pub point_mm: Vec3,
    /// Inward unit normal in world coordinates.
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Torso {
    pub dims: TorsoDims,
    pub breathing: BreathingModel,
    /// World position of the torso axis at its cranio-caudal midpoint.
    pub center_mm: Vec3,
    pub anchors: Vec<RegionAnchor>,
}

impl Torso {
    pub fn new(dims: TorsoDims, breathing: BreathingModel, center_mm: Vec3) -> Self {
        Self {
            dims,
            breathing,
            center_mm,
            anchors: default_anchors(),
        }
    }

    pub fn with_anchors(mut self, anchors: Vec<RegionAnchor>) -> Self {
        self.anchors = anchors;
        self
    }

    /// Same torso held at full expiration-neutral shape (breathing disabled).
    pub fn breath_hold(&self) -> Torso {
        Torso {
            breathing: BreathingModel {
                enabled: false,
                ..self.breathing
            },
            ..self.clone()
        }
    }

    pub fn breathing_offset(&self, t_s: f64) -> f64 {
        self.breathing.offset(t_s)
    }

    /// Semi-axes `(a + Δ, b + Δ)` of the cross-section at time `t_s`.
    pub fn semi_axes_at(&self, t_s: f64) -> (f64, f64) {
        let (a, b) = self.dims.semi_axes();
        let d = self.breathing_offset(t_s);
        (a + d, b + d)
    }

    pub fn section_to_world(&self, u: f64, y: f64, v: f64) -> Vec3 {
        [self.center_mm[0] - u, self.center_mm[1] + y, self.center_mm[2] + v]
    }

    pub fn world_to_section(&self, p: Vec3) -> (f64, f64, f64) {
        (
            self.center_mm[0] - p[0],
            p[1] - self.center_mm[1],
            p[2] - self.center_mm[2],
        )
    }

    pub fn y_in_range(&self, y_mm: f64) -> bool {
        y_mm.abs() <= self.dims.height_mm / 2.0
    }

    pub fn surface_point(&self, alpha_rad: f64, y_mm: f64, t_s: f64) -> Result<SurfacePoint> {
        if !self.y_in_range(y_mm) {
            return Err(Error::Domain(format!(
                "y = {y_mm} mm outside chest length ±{}",
                self.dims.height_mm / 2.0
            )));
        }
        if !alpha_rad.is_finite() || t_s < 0.0 {
            return Err(Error::Domain(format!("bad surface query α={alpha_rad}, t={t_s}")));
        }
        let (a, b) = self.semi_axes_at(t_s);
        let (s, c) = alpha_rad.sin_cos();
        let u = a * s;
        let v = b * c;
        // inward = −∇((u/a)² + (v/b)²)
        let gu = s / a;
        let gv = c / b;
        let n = gu.hypot(gv);
        let section_normal = [-gu / n, -gv / n];
        Ok(SurfacePoint {
            alpha_rad,
            y_mm,
            section_mm: [u, v],
            section_normal,
            point_mm: self.section_to_world(u, y_mm, v),
            normal: [-section_normal[0], 0.0, section_normal[1]],
        })
    }

    pub fn region_anchor(&self, region_id: u8, side: Side, posture: Posture) -> Result<RegionAnchor> {
        if !(1..=5).contains(&region_id) {
            return Err(Error::Protocol(format!("region {region_id} is not in 1..=5")));
        }
        let required = Posture::required_for(region_id);
        if posture != required {
            return Err(Error::Protocol(format!(
                "region {region_id} must be scanned {required:?}, not {posture:?}"
            )));
        }
        self.anchors
            .iter()
            .find(|r| r.region_id == region_id && r.side == side && r.posture == posture)
            .copied()
            .ok_or_else(|| Error::Config(format!("no anchor for region {region_id} {}", side.as_str())))
    }

    /// Signed distance from `p` to the lateral surface of the elliptical
    /// cylinder at time `t_s`; negative inside. End caps are not modelled.
    pub fn signed_distance(&self, p: Vec3, t_s: f64) -> f64 {
        let (a, b) = self.semi_axes_at(t_s);
        let (u, _, v) = self.world_to_section(p);
        let d = distance_to_ellipse(a, b, u, v);
        if (u / a).powi(2) + (v / b).powi(2) < 1.0 {
            -d
        } else {
            d
        }
    }

    /// Surface angle and cross-section distance of the point of the
    /// cross-section ellipse nearest to `p`.
    pub fn nearest_alpha(&self, p: Vec3, t_s: f64) -> f64 {
        let (a, b) = self.semi_axes_at(t_s);
        let (u, _, v) = self.world_to_section(p);
        let (cu, cv) = closest_on_ellipse(a, b, u, v);
        (cu / a).atan2(cv / b)
    }

    /// Angle of the inward normal from straight down at surface angle `alpha`,
    /// signed like `alpha`.
    pub fn normal_tilt(&self, alpha_rad: f64, t_s: f64) -> f64 {
        let (a, b) = self.semi_axes_at(t_s);
        let (s, c) = alpha_rad.sin_cos();
        (s / a).atan2(c / b)
    }

    /// Inverse of [`Torso::normal_tilt`] for |tilt| < π/2.
    pub fn alpha_for_tilt(&self, tilt_rad: f64, t_s: f64) -> f64 {
        let (a, b) = self.semi_axes_at(t_s);
        let (s, c) = tilt_rad.sin_cos();
        (a * s).atan2(b * c)
    }
}

/// Closest point on the ellipse `(u/a)² + (v/b)² = 1` to `(u, v)`.
fn closest_on_ellipse(a: f64, b: f64, u: f64, v: f64) -> (f64, f64) {
    // Work in the first quadrant with e0 >= e1.
    let swap = b > a;
    let (e0, e1, y0, y1) = if swap {
        (b, a, v.abs(), u.abs())
    } else {
        (a, b, u.abs(), v.abs())
    };
    let (x0, x1) = closest_first_quadrant(e0, e1, y0, y1);
    let (cu, cv) = if swap { (x1, x0) } else { (x0, x1) };
    (cu.copysign(u), cv.copysign(v))
}

fn distance_to_ellipse(a: f64, b: f64, u: f64, v: f64) -> f64 {
    let (cu, cv) = closest_on_ellipse(a, b, u, v);
    (cu - u).hypot(cv - v)
}

/// Closest point for e0 >= e1 > 0 and a query in the closed first quadrant,
/// by bisection on the Lagrange-multiplier root.
fn closest_first_quadrant(e0: f64, e1: f64, y0: f64, y1: f64) -> (f64, f64) {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return (y0, y1);
            }
            let r0 = (e0 / e1).powi(2);
            let s = lagrange_root(r0, z0, z1, g);
            (r0 * y0 / (s + r0), y1 / (s + 1.0))
        } else {
            (0.0, e1)
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            (e0 * xde0, e1 * (1.0 - xde0 * xde0).max(0.0).sqrt())
        } else {
            (e0, 0.0)
        }
    }
}

fn lagrange_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..2000 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let g = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}
