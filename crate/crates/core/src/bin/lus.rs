use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lus_teleop::analysis::report::{compare_report, write_report, Margins};
use lus_teleop::cli::{exit_code_for, run_session, workspace_check, EXIT_OK, EXIT_PROTOCOL};
use lus_teleop::protocol::replay::replay;
use lus_teleop::protocol::server::{serve, ServeOptions};
use lus_teleop::script::{full_blue_script, missing_reposition_script, saturation_push_script, SessionScript};
use lus_teleop::{Config, Error, Result};

/// Tele-operated lung ultrasound gantry: simulator, session server and analysis.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Configuration JSON; defaults apply to every missing field.
    #[arg(long, env = "LUS_CONFIG")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScriptKind {
    FullBlue,
    SaturationPush,
    MissingReposition,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a live session for operator and observer clients.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        /// NDJSON TCP port.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// HTTP port for the WebSocket endpoint (/ws) and console (/console).
        #[arg(long, default_value_t = 8080)]
        http_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Seed; defaults to the configured one.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the session log.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
    /// Feed a script to an in-process session and write its log.
    RunSession {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a logged session and compare it with the log.
    Replay {
        #[arg(long)]
        session: PathBuf,
    },
    /// Reachability of every scan target for mean and ±1 SD torsos.
    WorkspaceCheck {
        #[command(flatten)]
        config: ConfigArg,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Non-inferiority comparison of two arms of sessions.
    Analyze {
        /// Session directory of arm A (robot); repeat for more sessions.
        #[arg(long = "session-a", required = true)]
        session_a: Vec<PathBuf>,
        /// Session directory of arm B (manual); repeat for more sessions.
        #[arg(long = "session-b", required = true)]
        session_b: Vec<PathBuf>,
        /// JSON report path; a .txt rendering is written beside it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        margin_force: f64,
        #[arg(long, default_value_t = 0.5)]
        margin_cnr: f64,
        #[arg(long, default_value_t = 2.0)]
        margin_score: f64,
        #[arg(long, default_value_t = 5.0)]
        margin_duration_min: f64,
        /// Seed for the blinded frame order.
        #[arg(long, default_value_t = 0)]
        shuffle_seed: u64,
    },
    /// Write one of the built-in scripts for the given configuration.
    Script {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum)]
        kind: ScriptKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code_for(e) as u8)
}

fn write(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => fail(&e),
    }
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Serve {
            config,
            port,
            http_port,
            bind,
            seed,
            out,
            time_scale,
        } => {
            let cfg = config.load()?;
            let opts = ServeOptions {
                bind,
                tcp_port: port,
                http_port,
                seed: seed.unwrap_or(cfg.sim.seed),
                log_dir: out,
                time_scale,
            };
            let rt = tokio::runtime::Runtime::new()?;
            let summary = rt.block_on(serve(cfg, opts))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(summary["exit_code"].as_i64().unwrap_or(EXIT_PROTOCOL as i64) as i32)
        }
        Cmd::RunSession { config, script, out } => {
            let cfg = config.load()?;
            let script = SessionScript::load(&script)?;
            let o = run_session(&cfg, &script, &out)?;
            println!(
                "{:?}: {} views, max force {:.3} N, exit {}",
                o.reason, o.summary["completed_views"], o.summary["max_force_n"].as_f64().unwrap_or(0.0), o.exit_code
            );
            if let Some(v) = &o.violation {
                eprintln!("rejected: {v}");
            }
            Ok(o.exit_code)
        }
        Cmd::Replay { session } => {
            let r = replay(&session)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(if r.ok() { EXIT_OK } else { EXIT_PROTOCOL })
        }
        Cmd::WorkspaceCheck { config, json } => {
            let t = workspace_check(&config.load()?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&t)?);
            } else {
                print!("{t}");
            }
            Ok(EXIT_OK)
        }
        Cmd::Analyze {
            session_a,
            session_b,
            report,
            margin_force,
            margin_cnr,
            margin_score,
            margin_duration_min,
            shuffle_seed,
        } => {
            let margins = Margins {
                force_n: margin_force,
                cnr: margin_cnr,
                score: margin_score,
                duration_min: margin_duration_min,
            };
            let r = compare_report(&session_a, &session_b, margins, shuffle_seed)?;
            let txt = write_report(&r, &report)?;
            print!("{}", std::fs::read_to_string(txt)?);
            Ok(EXIT_OK)
        }
        Cmd::Script { config, kind, out } => {
            let cfg = config.load()?;
            let s = match kind {
                ScriptKind::FullBlue => full_blue_script(&cfg)?,
                ScriptKind::SaturationPush => saturation_push_script(&cfg)?,
                ScriptKind::MissingReposition => missing_reposition_script(&cfg)?,
            };
            write(&out, &s.to_ndjson()?)?;
            Ok(EXIT_OK)
        }
    }
}
