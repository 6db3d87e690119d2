//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use lus_teleop::analysis::cnr::{cnr, Roi};
use lus_teleop::analysis::stats::{noninferiority_from_summary, noninferiority_test, Direction, Summary};
use lus_teleop::cli::{run_session, workspace_check, TorsoSize, EXIT_OK, EXIT_SAFETY};
use lus_teleop::endeffector::{ring_rail_equilibrium, ring_rail_residual, torsion_equilibrium, torsion_residual};
use lus_teleop::frame::{nominal_rois, FrameGenerator, FrameMeta, UsFrame, View};
use lus_teleop::protocol::message::Message;
use lus_teleop::protocol::replay::replay;
use lus_teleop::protocol::session::{home_joints, EndReason, Input, SessionEngine};
use lus_teleop::script::{full_blue_script, saturation_push_script, ScriptBuilder, SessionScript, PRESS_DEPTH_MM};
use lus_teleop::torso::Side;
use lus_teleop::workflow::{Phase, WorkflowEvent, WorkflowState, TOTAL_VIEWS};
use lus_teleop::Config;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn io<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Feed timed messages to an engine, stepping until `end_tick` and calling
/// `watch` after every tick.
fn drive(engine: &mut SessionEngine, messages: &[Message], end_tick: u64, mut watch: impl FnMut(&SessionEngine)) -> Result<(), String> {
    let dt = engine.cfg.sim.dt_s;
    let mut pending = messages.iter().peekable();
    while engine.tick() < end_tick {
        while let Some(m) = pending.next_if(|m| (m.t_s / dt).round() as u64 <= engine.tick()) {
            io(engine.apply(Input::Command(m.clone())))?;
        }
        engine.step();
        engine.take_outbox();
        watch(engine);
    }
    Ok(())
}

/// Height of the home tip above the resting apex.
fn home_gap_mm(cfg: &Config) -> f64 {
    let tip_z = cfg.endeffector.origin_mm[2] + home_joints(cfg).z_mm - cfg.endeffector.le_mm;
    tip_z - (cfg.torso.center_mm[2] + cfg.torso.dims().semi_axes().1)
}

fn descent(cfg: &Config) -> ScriptBuilder {
    let mut b = ScriptBuilder::new();
    b.hello().wait(0.2);
    b.jog_z(-(home_gap_mm(cfg) + PRESS_DEPTH_MM), cfg.speeds.translation_mm_s);
    b.wait(0.5);
    b
}

fn force_constancy() -> Outcome {
    let started = Instant::now();
    let cfg = Config::default();
    let mut engine = io(SessionEngine::new(cfg.clone(), 1))?;
    let mut b = descent(&cfg);
    let hold_from = (b.t_s / cfg.sim.dt_s).round() as u64;
    let cycle = (cfg.breathing.period_s / cfg.sim.dt_s).round() as u64;
    b.wait(cfg.breathing.period_s);
    let (mut lo, mut hi, mut unsaturated) = (f64::MAX, f64::MIN, true);
    let (mut tlo, mut thi) = (f64::MAX, f64::MIN);
    drive(&mut engine, &b.finish(), hold_from + cycle, |e| {
        if e.tick() > hold_from {
            lo = lo.min(e.state.force_n);
            hi = hi.max(e.state.force_n);
            unsaturated &= e.state.spring.in_contact && !e.state.spring.saturated;
            tlo = tlo.min(e.state.spring.travel_mm);
            thi = thi.max(e.state.spring.travel_mm);
        }
    })?;
    let secs = started.elapsed().as_secs_f64();
    let ok = (lo - 7.845).abs() <= 1e-3 && (lo - 0.8 * 9.80665).abs() <= 1e-6 && hi - lo < 1e-9 && unsaturated && secs < 5.0;
    check(ok, format!("force {lo:.9} N, spread {:.2e} N over one breath, travel {tlo:.2}..{thi:.2} mm, unsaturated {unsaturated}, {secs:.3} s", hi - lo))
}

fn safety_envelope() -> Outcome {
    let started = Instant::now();
    let cfg = Config::default();
    let dir = io(tempfile::tempdir())?;
    let full = io(run_session(&cfg, &io(full_blue_script(&cfg))?, &dir.path().join("full")))?;
    let views = full.summary["completed_views"].as_u64().unwrap_or(0);
    let full_max = full.summary["max_force_n"].as_f64().unwrap_or(f64::NAN);
    let push = io(run_session(&cfg, &io(saturation_push_script(&cfg))?, &dir.path().join("push")))?;
    let push_max = push.summary["max_force_n"].as_f64().unwrap_or(f64::NAN);
    let step_increment = cfg.spring.k_hard_n_per_mm * cfg.speeds.translation_mm_s * cfg.sim.dt_s;
    let estops = push.summary["estop_count"].as_u64().unwrap_or(0);
    let secs = started.elapsed().as_secs_f64();
    let ok = full.reason == EndReason::Complete
        && full.exit_code == EXIT_OK
        && views == TOTAL_VIEWS as u64
        && full_max < 15.0
        && push.exit_code == EXIT_SAFETY
        && estops >= 1
        && push_max <= cfg.safety.estop_n + step_increment
        && secs < 60.0;
    check(
        ok,
        format!("full BLUE {views} views, max {full_max:.3} N; push estop at {push_max:.3} N (limit {:.2} N), exit {}; {secs:.1} s", cfg.safety.estop_n + step_increment, push.exit_code),
    )
}

fn workspace() -> Outcome {
    let table = io(workspace_check(&Config::default()))?;
    let counts: Vec<(usize, usize)> = TorsoSize::ALL.iter().map(|&s| table.count(s)).collect();
    let mut narrow = Config::default();
    narrow.joints.x.range_mm = 200.0;
    let t = io(workspace_check(&narrow))?;
    let lateral_lost = t.rows.iter().filter(|r| r.region == 3 || r.region == 4).all(|r| !r.reachable);
    let ok = counts.iter().all(|&c| c == (20, 20)) && lateral_lost;
    check(ok, format!("reachable per size {counts:?}; x range 200 mm loses lateral anchors: {lateral_lost}"))
}

/// Distance from a cross-section point to the ellipse by dense sampling.
fn ellipse_distance(a: f64, b: f64, u: f64, v: f64) -> f64 {
    let n = 72_000;
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            (a * t.sin() - u).hypot(b * t.cos() - v)
        })
        .fold(f64::MAX, f64::min)
}

fn arc_tracking() -> Outcome {
    let cfg = Config::default();
    let mut engine = io(SessionEngine::new(cfg.clone(), 1))?;
    let (anterior, lateral) = (0.2 * PI, 0.45 * PI);
    let mut b = descent(&cfg);
    b.arc(anterior).wait(anterior / cfg.arc.rate_max + 0.5);
    let from = (b.t_s / cfg.sim.dt_s).round() as u64;
    b.arc(lateral).wait((lateral - anterior) / cfg.arc.rate_max + 0.5);
    let to = (b.t_s / cfg.sim.dt_s).round() as u64;
    let every = cfg.sim.telemetry_every();
    let (mut worst_d, mut worst_inc, mut samples, mut contact) = (0.0f64, 0.0f64, 0, true);
    let torso = engine.sim.torso.clone();
    drive(&mut engine, &b.finish(), to, |e| {
        let st = &e.state;
        if st.tick < from || st.tick % every != 0 {
            return;
        }
        samples += 1;
        contact &= st.spring.in_contact;
        let (a, bb) = torso.semi_axes_at(st.t_s);
        let (u, _, v) = torso.world_to_section(st.pose.tip_mm);
        worst_d = worst_d.max(ellipse_distance(a, bb, u, v));
        // inward normal of the ellipse at the tip, back in world axes
        let (nu, nv) = (-u / (a * a), -v / (bb * bb));
        let n = nu.hypot(nv);
        let normal = [-nu / n, 0.0, nv / n];
        let c = st.pose.axis.iter().zip(normal).map(|(p, q)| p * q).sum::<f64>();
        worst_inc = worst_inc.max(c.abs().min(1.0).acos());
    })?;
    let final_alpha = engine.controller.arc.map_or(f64::NAN, |t| t.alpha_rad);
    let ok = samples > 0 && contact && worst_d <= 1.0 && worst_inc <= 2f64.to_radians() && (final_alpha - lateral).abs() < 1e-9;
    check(
        ok,
        format!("{samples} samples, max tip distance {worst_d:.4} mm, max incidence {:.4} deg, contact throughout {contact}", worst_inc.to_degrees()),
    )
}

fn bisection(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    while hi - lo > tol {
        let m = 0.5 * (lo + hi);
        if (f(m) > 0.0) == (flo > 0.0) {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

fn equilibrium_solvers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (m, l, k) = (rng.random_range(0.05..5.0), rng.random_range(0.01..0.3), rng.random_range(0.01..5.0));
        worst = worst.max(torsion_residual(m, l, k, torsion_equilibrium(m, l, k)).abs());
        let (kr, r, phi) = (rng.random_range(1.0..2000.0), rng.random_range(0.01..0.3), rng.random_range(0.05..3.1));
        worst = worst.max(ring_rail_residual(m, l, kr, r, phi, ring_rail_equilibrium(m, l, kr, r, phi)).abs());
    }
    let theta = torsion_equilibrium(1.0, 0.1, 0.5);
    let oracle = bisection(|t| torsion_residual(1.0, 0.1, 0.5, t), 0.1, PI - 1e-9, 1e-12);
    let ok = worst < 1e-10 && (theta - oracle).abs() <= 1e-9 && (theta - 1.87).abs() < 0.01;
    check(ok, format!("max residual {worst:.2e} over 1000 draws; torsion root {theta:.12} rad vs oracle {oracle:.12}"))
}

fn frame(width: usize, height: usize, pixels: Vec<u8>) -> UsFrame {
    UsFrame {
        width_px: width,
        height_px: height,
        pixels,
        meta: meta(0),
    }
}

fn meta(seq: u64) -> FrameMeta {
    FrameMeta {
        region: 1,
        side: Side::Right,
        view: View::Perpendicular,
        t_s: 0.0,
        force_n: 7.845,
        incidence_rad: 0.0,
        seq,
    }
}

fn oracle_cnr(f: &UsFrame, p: &Roi, b: &Roi) -> f64 {
    let stats = |r: &Roi| {
        let mut vals = Vec::new();
        for y in r.y0..r.y0 + r.height {
            for x in r.x0..r.x0 + r.width {
                vals.push(f64::from(f.pixels[y * f.width_px + x]));
            }
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        (m, vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
    };
    let ((mp, vp), (mb, vb)) = (stats(p), stats(b));
    (mp - mb).abs() / (vp + vb).sqrt()
}

fn cnr_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(16..64), rng.random_range(16..64));
        let f = frame(w, h, (0..w * h).map(|_| rng.random()).collect());
        let p = Roi::new(rng.random_range(0..w / 4), rng.random_range(0..h - 4), rng.random_range(2..w / 4), rng.random_range(2..4));
        let b = Roi::new(w / 2 + rng.random_range(0..w / 4), rng.random_range(0..h - 4), rng.random_range(2..w / 4), rng.random_range(2..4));
        let got = io(cnr(&f, &p, &b))?.cnr;
        let want = oracle_cnr(&f, &p, &b);
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }

    // 3x3 patches with sample mean/SD exactly 100/10 and 50/5
    let mut px = vec![0u8; 6 * 3];
    let (patch, back) = ([90, 110, 90, 110, 100, 110, 90, 110, 90], [45, 55, 45, 55, 50, 55, 45, 55, 45]);
    for y in 0..3 {
        for x in 0..3 {
            px[y * 6 + x] = patch[y * 3 + x];
            px[y * 6 + 3 + x] = back[y * 3 + x];
        }
    }
    let patch_cnr = io(cnr(&frame(6, 3, px), &Roi::new(0, 0, 3, 3), &Roi::new(3, 0, 3, 3)))?.cnr;

    let cfg = Config::default();
    let g = FrameGenerator::new(cfg.frame.clone(), false, cfg.sim.seed);
    let rois = nominal_rois(&g.cfg);
    let perfect = io(cnr(&g.synthesize(1.0, 0, meta(0)), &rois.pleural, &rois.background))?.cnr;
    let ok = worst <= 1e-12 && (patch_cnr - 4.4721).abs() <= 1e-4 && (patch_cnr - 50.0 / 125f64.sqrt()).abs() <= 1e-6 && (perfect - 4.38).abs() <= 1.0;
    check(ok, format!("max relative error {worst:.2e} over 100 frames; patch {patch_cnr:.6}; perfect-contact frame {perfect:.3}"))
}

fn statistics() -> Outcome {
    let s = |mean, sd| Summary { mean, sd, n: 30 };
    let r = |a, b, m, d| noninferiority_from_summary(a, b, m, d).map_err(|e| e.to_string());
    let force = r(s(10.48, 2.72), s(9.52, 1.02), 2.0, Direction::LowerBetter)?;
    let cnr = r(s(4.38, 0.95), s(4.48, 0.70), 0.5, Direction::HigherBetter)?;
    let score = r(s(7.85, 1.54), s(8.21, 1.04), 2.0, Direction::HigherBetter)?;
    let duration = r(s(27.5, 5.4), s(18.2, 3.2), 5.0, Direction::LowerBetter)?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 200;
    let mut agree = 0;
    for _ in 0..cases {
        let (na, nb) = (rng.random_range(8..25), rng.random_range(8..25));
        let da = io(Normal::new(rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0)))?;
        let db = io(Normal::new(0.0, rng.random_range(0.5..3.0)))?;
        let a: Vec<f64> = (0..na).map(|_| da.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..nb).map(|_| db.sample(&mut rng)).collect();
        let margin = rng.random_range(0.25..3.0);
        let welch = io(noninferiority_test(&a, &b, margin, Direction::LowerBetter))?;
        let mut diffs: Vec<f64> = (0..5000)
            .map(|_| {
                let ma = (0..na).map(|_| a[rng.random_range(0..na)]).sum::<f64>() / na as f64;
                let mb = (0..nb).map(|_| b[rng.random_range(0..nb)]).sum::<f64>() / nb as f64;
                ma - mb
            })
            .collect();
        diffs.sort_by(f64::total_cmp);
        let upper = diffs[(0.95 * diffs.len() as f64) as usize];
        agree += usize::from((upper < margin) == welch.non_inferior);
    }
    let ok = force.non_inferior && cnr.non_inferior && score.non_inferior && !duration.non_inferior && agree * 100 >= 95 * cases;
    check(
        ok,
        format!(
            "force {}, cnr {}, score {}, duration {}; bootstrap agreement {agree}/{cases}",
            force.non_inferior, cnr.non_inferior, score.non_inferior, duration.non_inferior
        ),
    )
}

fn files_equal(a: &Path, b: &Path, name: &str) -> bool {
    matches!((std::fs::read(a.join(name)), std::fs::read(b.join(name))), (Ok(x), Ok(y)) if x == y)
}

fn manifest_without_time(dir: &Path) -> Option<Value> {
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).ok()?).ok()?;
    m.as_object_mut()?.remove("created_unix_s");
    Some(m)
}

fn frame_names(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("frames"))
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn determinism_and_replay() -> Outcome {
    let cfg = Config::default();
    let dir = io(tempfile::tempdir())?;
    let script: SessionScript = io(full_blue_script(&cfg))?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    io(run_session(&cfg, &script, &a))?;
    io(run_session(&cfg, &script, &b))?;
    let identical = ["events.jsonl", "telemetry.jsonl", "summary.json"].iter().all(|n| files_equal(&a, &b, n))
        && manifest_without_time(&a).is_some()
        && manifest_without_time(&a) == manifest_without_time(&b)
        && frame_names(&a) == frame_names(&b)
        && !frame_names(&a).is_empty();
    let rep = io(replay(&a))?;

    // operator drop while pressing on the chest
    let mut engine = io(SessionEngine::new(cfg.clone(), 3))?;
    let b = descent(&cfg);
    let end = (b.t_s / cfg.sim.dt_s).round() as u64;
    drive(&mut engine, &b.clone().finish(), end, |_| {})?;
    let in_contact = engine.state.spring.in_contact;
    let dropped_at = engine.tick();
    io(engine.apply(Input::OperatorDisconnected))?;
    engine.step();
    let latched = engine.controller.estop_latched;
    let retracting = engine.controller.command(&engine.sim, &engine.state).z > 0.0;
    let ok = identical && rep.ok() && rep.max_divergence == 0.0 && in_contact && latched && retracting && engine.tick() == dropped_at + 1;
    check(
        ok,
        format!(
            "logs identical {identical}; replay divergence {} over {} telemetry lines, {} frames; disconnect estop after 1 tick {latched}, retracting {retracting}",
            rep.max_divergence, rep.telemetry_replayed, rep.frames_replayed
        ),
    )
}

fn random_event(rng: &mut ChaCha8Rng) -> WorkflowEvent {
    let view = if rng.random_bool(0.5) { View::Perpendicular } else { View::Parallel };
    match rng.random_range(0..8) {
        0 | 1 => WorkflowEvent::contact(),
        2 => WorkflowEvent::FeaturesFound,
        3 | 4 => WorkflowEvent::RecordingDone {
            view,
            duration_s: rng.random_range(3.0..7.0),
        },
        5 => WorkflowEvent::ArcTransitDone,
        6 => WorkflowEvent::RepositionConfirmed,
        _ => WorkflowEvent::ContactMade {
            region: Some(rng.random_range(1..=5)),
            side: Some(if rng.random_bool(0.5) { Side::Left } else { Side::Right }),
        },
    }
}

fn workflow_completeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let (mut complete, mut short) = (0, 0);
    for _ in 0..10_000 {
        let mut s = WorkflowState::new(rng.random_bool(0.3), 5.0);
        let mut t = 0.0;
        for _ in 0..1500 {
            t += 0.5;
            let _ = s.apply(&random_event(&mut rng), t);
            if s.phase == Phase::Complete {
                complete += 1;
                short += usize::from(s.completed.len() < TOTAL_VIEWS);
                break;
            }
        }
    }
    check(complete > 0 && short == 0, format!("{complete} of 10000 random sequences completed, {short} with fewer than {TOTAL_VIEWS} views"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("force constancy", force_constancy),
        ("safety envelope", safety_envelope),
        ("workspace", workspace),
        ("arc tracking", arc_tracking),
        ("equilibrium solvers", equilibrium_solvers),
        ("contrast-to-noise ratio", cnr_criterion),
        ("non-inferiority statistics", statistics),
        ("determinism and replay", determinism_and_replay),
        ("workflow completeness", workflow_completeness),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
