//! Spring force across travel, and the resting angles of the torsion shaft
//! and ring rail.

use lus_teleop::endeffector::{
    contact_force, ring_rail_roots, spring_state_update, torsion_equilibrium, torsion_residual, RingRailParams,
    TorsionParams, RING_RAIL_GRID,
};
use lus_teleop::Config;

fn main() {
    let cfg = Config::default();
    let spring = cfg.spring.params();
    println!("constant-force spring, {:.2} mm travel:", spring.travel_max_mm);
    for pen in [0.0, 0.5, 10.0, 25.0, 39.9, 40.0, 41.0, 44.0] {
        let s = spring_state_update(&spring, pen);
        println!(
            "  penetration {pen:>5.1} mm  travel {:>5.1} mm  force {:>7.4} N{}",
            s.travel_mm,
            contact_force(&spring, &s),
            if s.saturated { "  saturated" } else { "" }
        );
    }

    let t = TorsionParams::default();
    let l = 0.1;
    println!("\ntorsion shaft, l = {l} m, k = {} N·m/rad:", t.k_p_nm_per_rad);
    for m in [t.m_p_kg, 0.6, 1.0, 2.0] {
        let theta = torsion_equilibrium(m, l, t.k_p_nm_per_rad);
        println!(
            "  m = {m:.1} kg  theta = {theta:.9} rad  residual {:.1e}",
            torsion_residual(m, l, t.k_p_nm_per_rad, theta)
        );
    }

    let r = RingRailParams::default();
    let roots = ring_rail_roots(r.m_r_kg, r.l_r_m, r.k_r_n_per_m, r.radius_m, r.phi_rad, RING_RAIL_GRID);
    println!("\nring rail roots on [0, pi): {roots:.9?}");
}
