//! Reachability of every scan target for small, mean and large torsos, and
//! what a shorter x axis loses.

use lus_teleop::cli::workspace_check;
use lus_teleop::Config;

fn main() -> lus_teleop::Result<()> {
    let cfg = Config::default();
    print!("{}", workspace_check(&cfg)?);

    let mut narrow = cfg.clone();
    narrow.joints.x.range_mm = 200.0;
    let t = workspace_check(&narrow)?;
    let lost: Vec<String> = t
        .rows
        .iter()
        .filter(|r| !r.reachable)
        .map(|r| format!("{} r{}{}", r.torso.as_str(), r.region, &r.side.as_str()[..1]))
        .collect();
    println!("\nwith a 200 mm x axis, {} targets are out of reach: {}", lost.len(), lost.join(", "));
    Ok(())
}
