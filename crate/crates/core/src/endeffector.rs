//! Electronics-free compliance of the end-effector.
//!
//! The z-axis carries a constant-force spring balanced by a counterweight,
//! so while the passive travel is neither empty nor bottomed out the
//! contact force is `F = F_C + (M_CW − M_US)·g` whatever the travel. Two
//! further passive joints keep the probe perpendicular; their static
//! equilibria are solved here independently of each other.

use serde::{Deserialize, Serialize};

pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpringParams {
    pub f_c_n: f64,
    pub m_cw_kg: f64,
    pub m_us_kg: f64,
    pub travel_max_mm: f64,
    pub g_mps2: f64,
    /// Stiffness of the hard stop once the passive travel is exhausted.
    pub k_hard_n_per_mm: f64,
}

impl Default for SpringParams {
    fn default() -> Self {
        Self::from_kgf(0.8, 0.45, 0.45)
    }
}

impl SpringParams {
    pub fn from_kgf(f_c_kgf: f64, m_cw_kg: f64, m_us_kg: f64) -> Self {
        Self {
            f_c_n: f_c_kgf * STANDARD_GRAVITY,
            m_cw_kg,
            m_us_kg,
            travel_max_mm: 40.0,
            g_mps2: STANDARD_GRAVITY,
            k_hard_n_per_mm: 5.0,
        }
    }

    /// Force while the spring is inside its travel.
    pub fn nominal_force(&self) -> f64 {
        self.f_c_n + (self.m_cw_kg - self.m_us_kg) * self.g_mps2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpringState {
    pub travel_mm: f64,
    pub in_contact: bool,
    pub saturated: bool,
    /// Penetration beyond the end of travel, absorbed by the hard stop.
    pub overtravel_mm: f64,
}

/// Passive state for a rigid-tip penetration past the surface (mm).
pub fn spring_state_update(params: &SpringParams, penetration_mm: f64) -> SpringState {
    let in_contact = penetration_mm > 0.0;
    if !in_contact {
        return SpringState::default();
    }
    let saturated = penetration_mm >= params.travel_max_mm;
    SpringState {
        travel_mm: penetration_mm.min(params.travel_max_mm),
        in_contact,
        saturated,
        overtravel_mm: (penetration_mm - params.travel_max_mm).max(0.0),
    }
}

pub fn contact_force(params: &SpringParams, state: &SpringState) -> f64 {
    if !state.in_contact {
        return 0.0;
    }
    let mut f = params.nominal_force();
    if state.saturated {
        f += params.k_hard_n_per_mm * state.overtravel_mm;
    }
    f.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorsionParams {
    pub m_p_kg: f64,
    pub l_p_m: f64,
    pub k_p_nm_per_rad: f64,
}

impl Default for TorsionParams {
    fn default() -> Self {
        Self {
            m_p_kg: 0.3,
            l_p_m: 0.05,
            k_p_nm_per_rad: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingRailParams {
    pub m_r_kg: f64,
    pub l_r_m: f64,
    pub k_r_n_per_m: f64,
    pub radius_m: f64,
    pub phi_rad: f64,
}

impl Default for RingRailParams {
    fn default() -> Self {
        Self {
            m_r_kg: 0.5,
            l_r_m: 0.08,
            k_r_n_per_m: 200.0,
            radius_m: 0.05,
            phi_rad: std::f64::consts::FRAC_PI_3,
        }
    }
}

/// Residual of the torsion-shaft moment balance `m g l sin θ − k θ`.
pub fn torsion_residual(m_p: f64, l_p: f64, k_p: f64, theta: f64) -> f64 {
    m_p * STANDARD_GRAVITY * l_p * theta.sin() - k_p * theta
}

/// Residual of the ring-rail moment balance about the probe tip,
/// `m g l sin θ − k L² sin(φ/2) θ √(2 − 2 cos θ)`.
pub fn ring_rail_residual(m_r: f64, l_r: f64, k_r: f64, radius: f64, phi: f64, theta: f64) -> f64 {
    m_r * STANDARD_GRAVITY * l_r * theta.sin()
        - k_r * radius * radius * (phi / 2.0).sin() * theta * (2.0 - 2.0 * theta.cos()).max(0.0).sqrt()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Bisection on a bracket with `f(lo) > 0 >= f(hi)` down to adjacent floats.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // prefer the endpoint with the smaller residual magnitude
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Scan `[lo, hi]` on `n` intervals and refine every sign change by bisection.
pub fn scan_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let h = (hi - lo) / n as f64;
    let mut x0 = lo;
    let mut f0 = f(x0);
    if f0 == 0.0 {
        roots.push(x0);
    }
    for i in 1..=n {
        let x1 = if i == n { hi } else { lo + h * i as f64 };
        let f1 = f(x1);
        if f1 == 0.0 {
            roots.push(x1);
        } else if f0 != 0.0 && (f0 > 0.0) != (f1 > 0.0) {
            let root = if f0 > 0.0 {
                bisect(&f, x0, x1)
            } else {
                bisect(|x| -f(x), x0, x1)
            };
            roots.push(root);
        }
        x0 = x1;
        f0 = f1;
    }
    roots
}

/// Stable deflection of the torsion-spring shaft in `[0, π)`.
///
/// When `m g l ≤ k` only `θ = 0` solves the balance. Otherwise the
/// non-trivial root is found from `sinc θ = k / (m g l)`, which is strictly
/// decreasing on `(0, π)` and so has exactly one crossing there.
pub fn torsion_equilibrium(m_p: f64, l_p: f64, k_p: f64) -> f64 {
    let gravity_moment = m_p * STANDARD_GRAVITY * l_p;
    if !(gravity_moment > k_p) {
        return 0.0;
    }
    let ratio = k_p / gravity_moment;
    let g = |t: f64| sinc(t) - ratio;
    let theta = bisect(g, 0.0, std::f64::consts::PI);
    polish(|t| torsion_residual(m_p, l_p, k_p, t), theta)
}

/// Default sign-scan resolution for the ring-rail solver.
pub const RING_RAIL_GRID: usize = 4096;

/// Smallest positive root of the ring-rail balance in `(0, π)`, or 0 if the
/// balance only holds at `θ = 0`.
pub fn ring_rail_equilibrium(m_r: f64, l_r: f64, k_r: f64, radius: f64, phi: f64) -> f64 {
    ring_rail_equilibrium_with_grid(m_r, l_r, k_r, radius, phi, RING_RAIL_GRID)
}

pub fn ring_rail_equilibrium_with_grid(
    m_r: f64,
    l_r: f64,
    k_r: f64,
    radius: f64,
    phi: f64,
    grid: usize,
) -> f64 {
    // Divide out the trivial root: f(θ) = θ·g(θ) with √(2 − 2cos θ) = 2 sin(θ/2).
    let gravity_moment = m_r * STANDARD_GRAVITY * l_r;
    let spring = k_r * radius * radius * (phi / 2.0).sin();
    let g = |t: f64| gravity_moment * sinc(t) - spring * 2.0 * (t / 2.0).sin();
    let pi = std::f64::consts::PI;
    let roots = scan_roots(g, 0.0, pi, grid);
    match roots.into_iter().find(|&t| t > 0.0 && t < pi) {
        Some(t) => polish(|t| ring_rail_residual(m_r, l_r, k_r, radius, phi, t), t),
        None => 0.0,
    }
}

/// All roots of the ring-rail balance on `[0, π)`, including `θ = 0`.
pub fn ring_rail_roots(m_r: f64, l_r: f64, k_r: f64, radius: f64, phi: f64, grid: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let f = |t: f64| ring_rail_residual(m_r, l_r, k_r, radius, phi, t);
    let mut roots = vec![0.0];
    // start just past zero so the trivial root is not bracketed twice
    let lo = pi / grid as f64 * 1e-6;
    roots.extend(scan_roots(f, lo, pi, grid).into_iter().filter(|&t| t < pi));
    roots
}

/// A few guarded Newton steps on the original residual; keeps the bisection
/// result if Newton does not improve it.
fn polish(f: impl Fn(f64) -> f64, theta: f64) -> f64 {
    let mut best = theta;
    let mut best_r = f(theta).abs();
    let mut t = theta;
    for _ in 0..4 {
        let h = 1e-7 * t.abs().max(1e-3);
        let d = (f(t + h) - f(t - h)) / (2.0 * h);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        t -= f(t) / d;
        let r = f(t).abs();
        if r < best_r && t > 0.0 && t < std::f64::consts::PI {
            best = t;
            best_r = r;
        } else {
            break;
        }
    }
    best
}
