//! Log a short session, replay it, then tamper with the telemetry and
//! replay again.

use lus_teleop::cli::run_session;
use lus_teleop::protocol::replay::replay;
use lus_teleop::script::saturation_push_script;
use lus_teleop::Config;

fn main() -> lus_teleop::Result<()> {
    let cfg = Config::default();
    let dir = std::env::temp_dir().join(format!("lus-replay-{}", std::process::id()));
    let outcome = run_session(&cfg, &saturation_push_script(&cfg)?, &dir)?;
    println!("session: {:?}, exit {}, max force {}", outcome.reason, outcome.exit_code, outcome.summary["max_force_n"]);

    let r = replay(&dir)?;
    println!("clean replay: ok {}  divergence {}  lines {}", r.ok(), r.max_divergence, r.telemetry_replayed);

    let path = dir.join("telemetry.jsonl");
    let text = std::fs::read_to_string(&path)?;
    std::fs::write(&path, text.replacen("\"force_n\":0.0", "\"force_n\":0.5", 1))?;
    let r = replay(&dir)?;
    println!("tampered replay: ok {}  divergence {}  lines {:?}", r.ok(), r.max_divergence, r.divergent_lines);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
