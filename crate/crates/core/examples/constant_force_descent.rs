//! Lower the probe onto the breathing apex and watch the spring absorb the
//! chest motion at constant force.

use lus_teleop::kinematics::JointVelocity;
use lus_teleop::protocol::session::home_joints;
use lus_teleop::sim::Simulator;
use lus_teleop::Config;

fn main() {
    let cfg = Config::default();
    let sim = Simulator::from_config(&cfg);
    let mut st = sim.initial_state(home_joints(&cfg), cfg.sim.seed);
    let down = JointVelocity {
        z: -cfg.speeds.translation_mm_s,
        ..JointVelocity::ZERO
    };

    // 1.5 s at full speed: reach the skin, then press ~20 mm
    while st.t_s < 1.5 {
        st = sim.step(&st, down);
        if st.tick % 100 == 0 {
            println!(
                "t {:>5.2} s  z {:>6.1} mm  penetration {:>6.2} mm  force {:.5} N",
                st.t_s, st.joints.z_mm, st.penetration_mm, st.force_n
            );
        }
    }

    println!("\nholding for one breath:");
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    let end = st.t_s + cfg.breathing.period_s;
    while st.t_s < end {
        st = sim.step(&st, JointVelocity::ZERO);
        lo = lo.min(st.force_n);
        hi = hi.max(st.force_n);
        if st.tick % 500 == 0 {
            println!(
                "t {:>5.2} s  breathing {:+.2} mm  travel {:>5.2} mm  force {:.9} N",
                st.t_s,
                sim.torso.breathing_offset(st.t_s),
                st.spring.travel_mm,
                st.force_n
            );
        }
    }
    println!("force range over the breath: {:.3e} N", hi - lo);
}
