//! Surface points, normals and scan anchors of the default torso.

use std::f64::consts::PI;

use lus_teleop::torso::{Posture, Side};
use lus_teleop::workflow::ORDER;
use lus_teleop::Config;

fn main() -> lus_teleop::Result<()> {
    let cfg = Config::default();
    let torso = cfg.torso();
    let (a, b) = torso.dims.semi_axes();
    println!("cross-section semi-axes a = {a:.2} mm, b = {b:.2} mm, chest length {:.1} mm", torso.dims.height_mm);

    println!("\n{:>8} {:>24} {:>24}", "alpha", "point (mm)", "inward normal");
    for k in -4..=4 {
        let alpha = k as f64 * PI / 8.0;
        let sp = torso.surface_point(alpha, 0.0, 0.0)?;
        let [x, y, z] = sp.point_mm;
        let [nx, ny, nz] = sp.normal;
        println!("{alpha:>8.4} ({x:>6.1}, {y:>5.1}, {z:>6.1}) ({nx:>6.3}, {ny:>5.2}, {nz:>6.3})");
    }

    println!("\nbreathing offset over one period:");
    for i in 0..=8 {
        let t = i as f64 * cfg.breathing.period_s / 8.0;
        println!("  t = {t:.1} s  offset {:+.3} mm", torso.breathing_offset(t));
    }

    println!("\nscan anchors in protocol order:");
    for &(region, side) in ORDER.iter() {
        let posture = Posture::required_for(region);
        let anchor = torso.region_anchor(region, side, posture)?;
        let sp = torso.surface_point(anchor.alpha_rad, anchor.y_mm, 0.0)?;
        let side = if side == Side::Right { "right" } else { "left" };
        println!(
            "  region {region} {side:<5} {posture:?}: alpha {:+.4} rad, y {:+.0} mm, tilt {:+.4} rad",
            anchor.alpha_rad,
            anchor.y_mm,
            torso.normal_tilt(sp.alpha_rad, 0.0)
        );
    }
    Ok(())
}
