//! Sweep the probe from the anterior to the lateral chest in arc mode while
//! in contact.

use std::f64::consts::PI;

use lus_teleop::protocol::session::{Input, SessionEngine};
use lus_teleop::script::{ScriptBuilder, PRESS_DEPTH_MM};
use lus_teleop::Config;

fn main() -> lus_teleop::Result<()> {
    let cfg = Config::default();
    let mut engine = SessionEngine::new(cfg.clone(), cfg.sim.seed)?;

    // home tip sits 52.25 mm above the resting apex
    let mut b = ScriptBuilder::new();
    b.hello().wait(0.2);
    b.jog_z(-(52.25 + PRESS_DEPTH_MM), cfg.speeds.translation_mm_s).wait(0.5);
    let start = b.t_s;
    b.arc(0.2 * PI).wait(0.2 * PI / cfg.arc.rate_max + 0.3);
    b.arc(0.45 * PI).wait(0.25 * PI / cfg.arc.rate_max + 0.3);
    let end = b.t_s;

    let mut messages = b.finish().into_iter().peekable();
    println!("{:>6} {:>8} {:>8} {:>8} {:>8} {:>9}", "t_s", "alpha", "x_mm", "z_mm", "force_N", "incid_deg");
    while engine.t_s() < end {
        while let Some(m) = messages.next_if(|m| m.t_s <= engine.t_s() + 1e-9) {
            engine.apply(Input::Command(m))?;
        }
        engine.step();
        engine.take_outbox();
        let st = &engine.state;
        if st.t_s >= start && st.tick % 250 == 0 {
            let alpha = engine.controller.arc.map_or(0.0, |a| a.alpha_rad);
            println!(
                "{:>6.2} {alpha:>8.4} {:>8.2} {:>8.2} {:>8.4} {:>9.5}",
                st.t_s,
                st.pose.tip_mm[0],
                st.pose.tip_mm[2],
                st.force_n,
                st.incidence_rad.to_degrees()
            );
        }
    }
    Ok(())
}
