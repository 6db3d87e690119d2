//! Two-arm comparison of logged sessions: per-region force, CNR and score
//! tables, and the non-inferiority tests on each.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::score::assess_frame;
use crate::analysis::stats::{noninferiority_test, Direction, NonInfResult, Summary};
use crate::error::{Error, Result};
use crate::frame::{frame_from_pgm, nominal_rois, View};
use crate::protocol::log::{Manifest, EVENTS, FRAMES, MANIFEST, SUMMARY, TELEMETRY};
use crate::torso::Side;
use crate::workflow::RecordingEntry;

pub const REPORT_FORMAT: &str = "lus-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub force_n: f64,
    pub cnr: f64,
    pub score: f64,
    pub duration_min: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            force_n: 2.0,
            cnr: 0.5,
            score: 2.0,
            duration_min: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub arm: String,
    pub session: String,
    pub file: String,
    pub region: u8,
    pub side: Side,
    pub view: View,
    pub force_n: f64,
    pub cnr: f64,
    pub a_line_cnr: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub arm: String,
    pub session: String,
    pub region: u8,
    pub side: Side,
    pub frames: usize,
    pub mean_force_n: f64,
    pub max_force_n: f64,
    pub cnr: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub sessions: Vec<String>,
    pub regions: usize,
    pub force_n: Option<Summary>,
    pub cnr: Option<Summary>,
    pub score: Option<Summary>,
    pub duration_min: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tests {
    pub force: Option<NonInfResult>,
    pub cnr: Option<NonInfResult>,
    pub score: Option<NonInfResult>,
    pub duration: Option<NonInfResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub format: String,
    pub method: String,
    pub unit: String,
    pub margins: Margins,
    pub shuffle_seed: u64,
    pub arm_a: ArmSummary,
    pub arm_b: ArmSummary,
    pub tests: Tests,
    pub notes: Vec<String>,
    pub regions: Vec<RegionRow>,
    /// Per-frame table in shuffled order for blinded review.
    pub frames: Vec<FrameRow>,
}

struct SessionData {
    name: String,
    duration_min: f64,
    regions: Vec<RegionRow>,
    frames: Vec<FrameRow>,
}

fn missing_artifacts(dir: &Path) -> Vec<String> {
    let mut missing: Vec<String> = [MANIFEST, EVENTS, TELEMETRY, SUMMARY, FRAMES]
        .iter()
        .filter(|f| !dir.join(f).exists())
        .map(|f| dir.join(f).display().to_string())
        .collect();
    if missing.is_empty() {
        if let Ok(entries) = recording_entries(dir) {
            for e in entries {
                for seq in e.first_seq..=e.last_seq {
                    let p = dir.join(FRAMES).join(frame_name(&e, seq));
                    if !p.exists() {
                        missing.push(p.display().to_string());
                    }
                }
            }
        } else {
            missing.push(format!("{} (no recordings list)", dir.join(SUMMARY).display()));
        }
    }
    missing
}

fn frame_name(e: &RecordingEntry, seq: u64) -> String {
    format!("{}_{}_{}_{seq:04}.pgm", e.region, e.side.as_str(), e.view.as_str())
}

fn read_summary(dir: &Path) -> Result<Value> {
    let text = fs::read_to_string(dir.join(SUMMARY))?;
    Ok(serde_json::from_str(&text)?)
}

fn recording_entries(dir: &Path) -> Result<Vec<RecordingEntry>> {
    let summary = read_summary(dir)?;
    let rec = summary
        .get("recordings")
        .cloned()
        .ok_or_else(|| Error::Report("summary has no recordings".into()))?;
    Ok(serde_json::from_value(rec)?)
}

fn load_session(arm: &str, dir: &Path) -> Result<SessionData> {
    let manifest = Manifest::load(dir).map_err(|e| Error::Report(e.to_string()))?;
    let rois = nominal_rois(&manifest.config.frame);
    let summary = read_summary(dir)?;
    let t_end = summary.get("t_end_s").and_then(Value::as_f64).unwrap_or(0.0);
    let name = dir.display().to_string();
    let mut frames = Vec::new();
    let mut by_region: BTreeMap<(u8, Side), Vec<&RecordingEntry>> = BTreeMap::new();
    let entries = recording_entries(dir)?;
    for e in &entries {
        by_region.entry((e.region, e.side)).or_default().push(e);
        for seq in e.first_seq..=e.last_seq {
            let file = frame_name(e, seq);
            let frame = frame_from_pgm(&fs::read(dir.join(FRAMES).join(&file))?)?;
            let q = assess_frame(&frame, &rois)?;
            frames.push(FrameRow {
                arm: arm.into(),
                session: name.clone(),
                file,
                region: e.region,
                side: e.side,
                view: e.view,
                force_n: frame.meta.force_n,
                cnr: q.pleural.cnr,
                a_line_cnr: q.a_line_cnr,
                score: q.score,
            });
        }
    }
    let regions = by_region
        .into_iter()
        .map(|((region, side), es)| {
            let rows: Vec<&FrameRow> = frames.iter().filter(|f| f.region == region && f.side == side).collect();
            let n = rows.len().max(1) as f64;
            let frames_total: u64 = es.iter().map(|e| e.frames).sum();
            RegionRow {
                arm: arm.into(),
                session: name.clone(),
                region,
                side,
                frames: rows.len(),
                mean_force_n: es.iter().map(|e| e.mean_force_n * e.frames as f64).sum::<f64>() / frames_total.max(1) as f64,
                max_force_n: es.iter().map(|e| e.max_force_n).fold(0.0, f64::max),
                cnr: rows.iter().map(|f| f.cnr).sum::<f64>() / n,
                score: rows.iter().map(|f| f.score).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(SessionData {
        name,
        duration_min: t_end / 60.0,
        regions,
        frames,
    })
}

fn load_arm(arm: &str, dirs: &[PathBuf]) -> Result<Vec<SessionData>> {
    dirs.iter().map(|d| load_session(arm, d)).collect()
}

fn arm_summary(sessions: &[SessionData]) -> ArmSummary {
    let regions: Vec<&RegionRow> = sessions.iter().flat_map(|s| &s.regions).collect();
    let of = |f: fn(&RegionRow) -> f64| Summary::of(&regions.iter().map(|r| f(r)).collect::<Vec<_>>()).ok();
    ArmSummary {
        sessions: sessions.iter().map(|s| s.name.clone()).collect(),
        regions: regions.len(),
        force_n: of(|r| r.mean_force_n),
        cnr: of(|r| r.cnr),
        score: of(|r| r.score),
        duration_min: sessions.iter().map(|s| s.duration_min).collect(),
    }
}

/// Compare arm `a` (robot) against arm `b` (manual). Every session needs a
/// manifest, event and telemetry logs, a summary and all recorded frames.
pub fn compare_report(a_dirs: &[PathBuf], b_dirs: &[PathBuf], margins: Margins, shuffle_seed: u64) -> Result<CompareReport> {
    if a_dirs.is_empty() || b_dirs.is_empty() {
        return Err(Error::Report("each arm needs at least one session".into()));
    }
    let missing: Vec<String> = a_dirs.iter().chain(b_dirs).flat_map(|d| missing_artifacts(d)).collect();
    if !missing.is_empty() {
        return Err(Error::Report(format!("missing artifacts: {}", missing.join(", "))));
    }
    let a = load_arm("a", a_dirs)?;
    let b = load_arm("b", b_dirs)?;
    let mut notes = vec![
        "unit of analysis: one (region, side) per session; frames are averaged within it".to_string(),
        "difference is a - b; a is the robotic arm".to_string(),
    ];

    let values = |s: &[SessionData], f: fn(&RegionRow) -> f64| -> Vec<f64> {
        s.iter().flat_map(|x| &x.regions).map(f).collect()
    };
    let mut test = |name: &str, xa: Vec<f64>, xb: Vec<f64>, margin: f64, dir: Direction| {
        match noninferiority_test(&xa, &xb, margin, dir) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("{name} test not computed: {e}"));
                None
            }
        }
    };
    let tests = Tests {
        force: test("force", values(&a, |r| r.mean_force_n), values(&b, |r| r.mean_force_n), margins.force_n, Direction::LowerBetter),
        cnr: test("cnr", values(&a, |r| r.cnr), values(&b, |r| r.cnr), margins.cnr, Direction::HigherBetter),
        score: test("score", values(&a, |r| r.score), values(&b, |r| r.score), margins.score, Direction::HigherBetter),
        duration: test(
            "duration",
            a.iter().map(|s| s.duration_min).collect(),
            b.iter().map(|s| s.duration_min).collect(),
            margins.duration_min,
            Direction::LowerBetter,
        ),
    };

    let mut frames: Vec<FrameRow> = a.iter().chain(&b).flat_map(|s| s.frames.clone()).collect();
    frames.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(CompareReport {
        format: REPORT_FORMAT.into(),
        method: "Welch two-sample t, 90% two-sided CI".into(),
        unit: "region".into(),
        margins,
        shuffle_seed,
        arm_a: arm_summary(&a),
        arm_b: arm_summary(&b),
        tests,
        notes,
        regions: a.iter().chain(&b).flat_map(|s| s.regions.clone()).collect(),
        frames,
    })
}

fn fmt_summary(s: &Option<Summary>) -> String {
    s.map_or("n/a".into(), |s| format!("{:.3} ± {:.3} (n={})", s.mean, s.sd, s.n))
}

fn fmt_test(t: &Option<NonInfResult>) -> String {
    t.as_ref().map_or("not computed".into(), |t| {
        format!(
            "diff {:+.3}, 90% CI [{:.3}, {:.3}], margin {}, p {:.4} -> {}",
            t.mean_diff,
            t.ci_low,
            t.ci_high,
            t.margin,
            t.p_value,
            if t.non_inferior { "non-inferior" } else { "not shown non-inferior" }
        )
    })
}

/// Human-readable rendering written next to the JSON report.
pub fn render_text(r: &CompareReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Comparison report ({})", r.method);
    let _ = writeln!(s, "shuffle seed {}", r.shuffle_seed);
    for (name, arm) in [("A", &r.arm_a), ("B", &r.arm_b)] {
        let _ = writeln!(s, "\narm {name}: {} session(s), {} region(s)", arm.sessions.len(), arm.regions);
        let _ = writeln!(s, "  force N   {}", fmt_summary(&arm.force_n));
        let _ = writeln!(s, "  CNR       {}", fmt_summary(&arm.cnr));
        let _ = writeln!(s, "  score     {}", fmt_summary(&arm.score));
        let d: Vec<String> = arm.duration_min.iter().map(|d| format!("{d:.2}")).collect();
        let _ = writeln!(s, "  duration  [{}] min", d.join(", "));
    }
    let _ = writeln!(s, "\nnon-inferiority (a - b)");
    let _ = writeln!(s, "  force     {}", fmt_test(&r.tests.force));
    let _ = writeln!(s, "  CNR       {}", fmt_test(&r.tests.cnr));
    let _ = writeln!(s, "  score     {}", fmt_test(&r.tests.score));
    let _ = writeln!(s, "  duration  {}", fmt_test(&r.tests.duration));
    let _ = writeln!(s, "\nper region");
    let _ = writeln!(s, "  {:<3} {:>6} {:>5} {:>7} {:>8} {:>8} {:>7} {:>6}", "arm", "region", "side", "frames", "force", "max", "cnr", "score");
    for g in &r.regions {
        let _ = writeln!(
            s,
            "  {:<3} {:>6} {:>5} {:>7} {:>8.3} {:>8.3} {:>7.3} {:>6.2}",
            g.arm,
            g.region,
            g.side.as_str(),
            g.frames,
            g.mean_force_n,
            g.max_force_n,
            g.cnr,
            g.score
        );
    }
    for n in &r.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Write the JSON report and its `.txt` sidecar.
pub fn write_report(r: &CompareReport, path: &Path) -> Result<PathBuf> {
    fs::write(path, serde_json::to_string_pretty(r)? + "\n")?;
    let txt = path.with_extension("txt");
    fs::write(&txt, render_text(r))?;
    Ok(txt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_artifacts_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let r = compare_report(&[dir.path().into()], &[dir.path().into()], Margins::default(), 1);
        match r {
            Err(Error::Report(m)) => {
                assert!(m.contains("manifest.json") && m.contains("summary.json"), "{m}");
            }
            other => panic!("{other:?}"),
        }
    }
}
