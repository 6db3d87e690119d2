//! Render synthetic B-mode frames over a range of coupling qualities, write
//! them as PGM and report their contrast and surrogate score.
//!
//! Usage: render_frames [out_dir]

use std::path::PathBuf;

use lus_teleop::analysis::score::assess_frame;
use lus_teleop::frame::{coupling_quality, encode_pgm, nominal_rois, FrameGenerator, FrameMeta, View};
use lus_teleop::torso::Side;
use lus_teleop::Config;

fn main() -> lus_teleop::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "frames_demo".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = Config::default();
    let gen = FrameGenerator::new(cfg.frame.clone(), cfg.pathology.b_lines, cfg.sim.seed);
    let rois = nominal_rois(&gen.cfg);

    let cases = [(7.845, 0.0), (7.845, 0.4), (2.0, 0.0), (17.0, 0.0), (0.5, 0.9)];
    for (i, (force, incidence)) in cases.into_iter().enumerate() {
        let q = coupling_quality(force, incidence, &gen.cfg);
        let meta = FrameMeta {
            region: 1,
            side: Side::Right,
            view: View::Perpendicular,
            t_s: 0.0,
            force_n: force,
            incidence_rad: incidence,
            seq: i as u64,
        };
        let frame = gen.synthesize(q, 0, meta);
        let quality = assess_frame(&frame, &rois)?;
        let path = out.join(format!("quality_{i}.pgm"));
        std::fs::write(&path, encode_pgm(&frame)?)?;
        println!(
            "force {force:>6.3} N  incidence {incidence:.2} rad  q {q:.3}  CNR {:.3}  A-line CNR {:.3}  score {:.2}  -> {}",
            quality.pleural.cnr,
            quality.a_line_cnr,
            quality.score,
            path.display()
        );
    }
    Ok(())
}
