//! Non-inferiority of the robotic arm against manual scanning from
//! published summary statistics (n = 30 assumed per arm).

use lus_teleop::analysis::stats::{noninferiority_from_summary, Direction, Summary};

fn main() -> lus_teleop::Result<()> {
    let s = |mean, sd| Summary { mean, sd, n: 30 };
    let rows = [
        ("contact force (N)", s(10.48, 2.72), s(9.52, 1.02), 2.0, Direction::LowerBetter),
        ("pleural CNR", s(4.38, 0.95), s(4.48, 0.70), 0.5, Direction::HigherBetter),
        ("image score", s(7.85, 1.54), s(8.21, 1.04), 2.0, Direction::HigherBetter),
        ("procedure time (min)", s(27.5, 5.4), s(18.2, 3.2), 5.0, Direction::LowerBetter),
    ];
    for (name, robot, manual, margin, dir) in rows {
        let r = noninferiority_from_summary(robot, manual, margin, dir)?;
        println!(
            "{name:<22} diff {:+.2}  90% CI [{:+.3}, {:+.3}]  margin {margin}  p {:.4}  {}",
            r.mean_diff,
            r.ci_low,
            r.ci_high,
            r.p_value,
            if r.non_inferior { "non-inferior" } else { "not shown non-inferior" }
        );
    }
    Ok(())
}
