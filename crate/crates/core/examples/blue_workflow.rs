//! Run the bundled ten-region scan and print what the session recorded.
//!
//! Usage: blue_workflow [out_dir]

use std::path::PathBuf;

use lus_teleop::cli::run_session;
use lus_teleop::protocol::log::read_jsonl;
use lus_teleop::script::full_blue_script;
use lus_teleop::Config;

fn main() -> lus_teleop::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "blue_session".into()));
    let cfg = Config::default();
    let script = full_blue_script(&cfg)?;
    println!("script: {} messages over {:.1} s", script.messages.len(), script.messages.last().map_or(0.0, |m| m.t_s));

    let outcome = run_session(&cfg, &script, &out)?;
    for r in read_jsonl(&out.join("events.jsonl"))? {
        if r["record"] == "workflow" {
            println!(
                "{:>7.3} s  {:<20} region {} {:<5} {} -> {}",
                r["t_s"].as_f64().unwrap_or(0.0),
                r["event"].as_str().unwrap_or(""),
                r["region"],
                r["side"].as_str().unwrap_or(""),
                r["substate_before"].as_str().unwrap_or(""),
                r["substate_after"].as_str().unwrap_or("")
            );
        }
    }
    println!("\n{}", serde_json::to_string_pretty(&outcome.summary)?);
    println!("log written to {}", out.display());
    Ok(())
}
