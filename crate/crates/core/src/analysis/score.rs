//! Surrogate 0–10 image score standing in for expert grading.
//!
//! Below a CNR of 3 the score is the CNR itself, so a frame is graded
//! diagnostic (score ≥ 3) exactly when its CNR is. Above that, pleural
//! contrast contributes up to 4 points and A-line visibility up to 3.

use serde::{Deserialize, Serialize};

use crate::analysis::cnr::{cnr, CnrResult};
use crate::error::Result;
use crate::frame::{NominalRois, UsFrame};

pub const DIAGNOSTIC_SCORE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameQuality {
    pub pleural: CnrResult,
    pub a_line_cnr: f64,
    pub score: f64,
}

pub fn score_from(cnr: f64, a_line_cnr: f64) -> f64 {
    if cnr < DIAGNOSTIC_SCORE {
        return cnr.max(0.0);
    }
    let contrast = 4.0 * ((cnr - DIAGNOSTIC_SCORE) / 0.75).tanh();
    let reverb = 3.0 * (a_line_cnr / 2.0).clamp(0.0, 1.0);
    (DIAGNOSTIC_SCORE + contrast + reverb).min(10.0)
}

pub fn assess_frame(frame: &UsFrame, rois: &NominalRois) -> Result<FrameQuality> {
    let pleural = cnr(frame, &rois.pleural, &rois.background)?;
    let a_line = cnr(frame, &rois.a_line, &rois.background)?.cnr;
    Ok(FrameQuality {
        score: score_from(pleural.cnr, a_line),
        pleural,
        a_line_cnr: a_line,
    })
}

pub fn surrogate_score(frame: &UsFrame, rois: &NominalRois) -> Result<f64> {
    Ok(assess_frame(frame, rois)?.score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FrameConfig;
    use crate::frame::{nominal_rois, FrameGenerator, FrameMeta, View};
    use crate::torso::Side;
    use proptest::prelude::*;

    fn frame(q: f64, seq: u64) -> UsFrame {
        let g = FrameGenerator::new(FrameConfig::default(), false, 1);
        g.synthesize(
            q,
            0,
            FrameMeta {
                region: 1,
                side: Side::Right,
                view: View::Perpendicular,
                t_s: 0.0,
                force_n: 0.0,
                incidence_rad: 0.0,
                seq,
            },
        )
    }

    #[test]
    fn speckle_below_and_perfect_above() {
        let rois = nominal_rois(&FrameConfig::default());
        assert!(surrogate_score(&frame(0.0, 1), &rois).unwrap() < 3.0);
        assert!(surrogate_score(&frame(1.0, 1), &rois).unwrap() >= 7.0);
    }

    #[test]
    fn paired_monotonicity() {
        let rois = nominal_rois(&FrameConfig::default());
        for seq in 0..20 {
            let lo = surrogate_score(&frame(0.5, seq), &rois).unwrap();
            let hi = surrogate_score(&frame(1.0, seq), &rois).unwrap();
            assert!(lo <= hi, "seq {seq}: {lo} > {hi}");
        }
    }

    proptest! {
        #[test]
        fn threshold_and_monotone(c in 0.0..10.0f64, a in 0.0..5.0f64, dc in 0.0..2.0f64, da in 0.0..2.0f64) {
            let s = score_from(c, a);
            prop_assert_eq!(s >= 3.0, c >= 3.0);
            prop_assert!((0.0..=10.0).contains(&s));
            prop_assert!(score_from(c + dc, a + da) >= s);
        }
    }
}
