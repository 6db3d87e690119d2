//! Append-only session directory: `manifest.json` (written first),
//! `events.jsonl`, `telemetry.jsonl`, `frames/*.pgm` and `summary.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Config;
use crate::error::{Error, Result};

pub const FORMAT: &str = "lus-session/1";
pub const MANIFEST: &str = "manifest.json";
pub const EVENTS: &str = "events.jsonl";
pub const TELEMETRY: &str = "telemetry.jsonl";
pub const FRAMES: &str = "frames";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Wall-clock creation time; the only non-reproducible value in a log.
    pub created_unix_s: u64,
    pub config: Config,
}

impl Manifest {
    pub fn new(config: Config, seed: u64, label: Option<String>) -> Self {
        let created_unix_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            format: FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            label,
            created_unix_s,
            config,
        }
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::Replay(format!("{}: {e}", path.display())))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Replay(format!("corrupt manifest {}: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(Error::Replay(format!("unsupported session format {:?}", m.format)));
        }
        m.config
            .validate()
            .map_err(|e| Error::Replay(format!("manifest config invalid: {e}")))?;
        Ok(m)
    }
}

/// Log output produced by the engine, waiting to be persisted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogBuffer {
    pub events: Vec<String>,
    pub telemetry: Vec<String>,
    pub frames: Vec<(String, Vec<u8>)>,
}

impl LogBuffer {
    pub fn event(&mut self, record: &Value) {
        self.events.push(record.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.telemetry.is_empty() && self.frames.is_empty()
    }

    pub fn append(&mut self, other: LogBuffer) {
        self.events.extend(other.events);
        self.telemetry.extend(other.telemetry);
        self.frames.extend(other.frames);
    }
}

pub struct SessionLog {
    dir: PathBuf,
    events: BufWriter<File>,
    telemetry: BufWriter<File>,
}

impl SessionLog {
    pub fn create(dir: &Path, manifest: &Manifest) -> Result<SessionLog> {
        fs::create_dir_all(dir.join(FRAMES))?;
        let text = serde_json::to_string_pretty(manifest)?;
        fs::write(dir.join(MANIFEST), text + "\n")?;
        Ok(SessionLog {
            dir: dir.to_path_buf(),
            events: BufWriter::new(File::create(dir.join(EVENTS))?),
            telemetry: BufWriter::new(File::create(dir.join(TELEMETRY))?),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, buf: LogBuffer) -> Result<()> {
        for line in buf.events {
            self.events.write_all(line.as_bytes())?;
            self.events.write_all(b"\n")?;
        }
        for line in buf.telemetry {
            self.telemetry.write_all(line.as_bytes())?;
            self.telemetry.write_all(b"\n")?;
        }
        for (name, bytes) in buf.frames {
            fs::write(self.dir.join(FRAMES).join(name), bytes)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.events.flush()?;
        self.telemetry.flush()?;
        Ok(())
    }

    pub fn finish(mut self, summary: &Value) -> Result<()> {
        self.flush()?;
        fs::write(self.dir.join(SUMMARY), serde_json::to_string_pretty(summary)? + "\n")?;
        Ok(())
    }
}

/// Read a JSON-lines file into values, failing on the first bad line.
pub fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Replay(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
