//! Synthetic B-mode frames: speckle background, a pleural band whose
//! brightness follows probe coupling, decaying A-line reverberations and an
//! optional B-line overlay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::cnr::Roi;
use crate::config::FrameConfig;
use crate::error::{Error, Result};
use crate::sim::SimState;
use crate::torso::{Side, Torso};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Perpendicular,
    Parallel,
}

impl View {
    pub const BOTH: [View; 2] = [View::Perpendicular, View::Parallel];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Perpendicular => "perpendicular",
            View::Parallel => "parallel",
        }
    }

    pub fn index(self) -> usize {
        match self {
            View::Perpendicular => 0,
            View::Parallel => 1,
        }
    }

    /// Probe roll for this view; the two views are 90° apart.
    pub fn probe_angle_rad(self) -> f64 {
        match self {
            View::Perpendicular => 0.0,
            View::Parallel => std::f64::consts::FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub region: u8,
    pub side: Side,
    pub view: View,
    pub t_s: f64,
    pub force_n: f64,
    pub incidence_rad: f64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsFrame {
    pub width_px: usize,
    pub height_px: usize,
    /// Row-major 8-bit grayscale.
    pub pixels: Vec<u8>,
    pub meta: FrameMeta,
}

impl UsFrame {
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width_px + x]
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_{}_{:04}.pgm",
            self.meta.region,
            self.meta.side.as_str(),
            self.meta.view.as_str(),
            self.meta.seq
        )
    }
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Force part of the coupling quality: 1 inside the good band, linear ramps
/// to 0 at 0 N and at the upper zero point.
pub fn force_quality(force_n: f64, cfg: &FrameConfig) -> f64 {
    let (lo, hi, zero) = (cfg.force_good_low_n, cfg.force_good_high_n, cfg.force_zero_at_n);
    if force_n <= 0.0 || force_n >= zero {
        0.0
    } else if force_n < lo {
        force_n / lo
    } else if force_n <= hi {
        1.0
    } else {
        (zero - force_n) / (zero - hi)
    }
}

pub fn alignment_quality(incidence_rad: f64) -> f64 {
    let c = incidence_rad.cos();
    c * c
}

pub fn coupling_quality(force_n: f64, incidence_rad: f64, cfg: &FrameConfig) -> f64 {
    force_quality(force_n, cfg) * alignment_quality(incidence_rad)
}

/// Standard measurement regions for a frame of this geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NominalRois {
    pub pleural: Roi,
    pub background: Roi,
    pub a_line: Roi,
}

pub fn nominal_rois(cfg: &FrameConfig) -> NominalRois {
    let (w, row, h) = (cfg.width_px, cfg.pleural_row, cfg.band_half_px);
    let x0 = w / 4;
    let width = w / 2;
    let band = 2 * h + 1;
    let bg_top = row / 2 + 4;
    NominalRois {
        pleural: Roi::new(x0, row - h, width, band),
        background: Roi::new(x0, bg_top, width, row - h - 4 - bg_top),
        a_line: Roi::new(x0, 2 * row - h, width, band),
    }
}

#[derive(Debug, Clone)]
pub struct FrameGenerator {
    pub cfg: FrameConfig,
    pub b_lines: bool,
    pub seed: u64,
}

impl FrameGenerator {
    pub fn new(cfg: FrameConfig, b_lines: bool, seed: u64) -> Self {
        Self { cfg, b_lines, seed }
    }

    fn band_rows(&self, center: usize) -> std::ops::RangeInclusive<usize> {
        center.saturating_sub(self.cfg.band_half_px)..=center + self.cfg.band_half_px
    }

    /// Noise-free intensity map for coupling quality `q`.
    pub fn mean_image(&self, q: f64) -> Vec<f64> {
        let cfg = &self.cfg;
        let (w, hgt) = (cfg.width_px, cfg.height_px);
        let bg = cfg.background_mean;
        let contrast = cfg.pleural_gain * q;
        let mut mu = vec![bg; w * hgt];
        let mut k = 0;
        let mut center = cfg.pleural_row;
        while center < hgt {
            let level = bg + cfg.a_line_decay.powi(k) * contrast;
            for y in self.band_rows(center).filter(|&y| y < hgt) {
                mu[y * w..(y + 1) * w].fill(level);
            }
            k += 1;
            center += cfg.pleural_row;
        }
        if self.b_lines && q > 0.0 {
            let level = bg + 0.6 * contrast;
            for col in self.b_line_columns() {
                for y in cfg.pleural_row..hgt {
                    for x in col.saturating_sub(1)..=(col + 1).min(w - 1) {
                        let m = &mut mu[y * w + x];
                        *m = m.max(level);
                    }
                }
            }
        }
        mu
    }

    fn b_line_columns(&self) -> Vec<usize> {
        let w = self.cfg.width_px;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0xB11E));
        (0..3).map(|_| rng.random_range(w / 8..w - w / 8)).collect()
    }

    /// Render from an explicit coupling quality. `shift_px` slides the
    /// tissue-locked speckle of the pleural band sideways.
    pub fn synthesize(&self, q: f64, shift_px: i64, meta: FrameMeta) -> UsFrame {
        let cfg = &self.cfg;
        let (w, hgt) = (cfg.width_px, cfg.height_px);
        let mu = self.mean_image(q.clamp(0.0, 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, meta.seq));
        let mut noise: Vec<f64> = (0..w * hgt).map(|_| rng.sample(StandardNormal)).collect();

        // pleural speckle moves with the tissue rather than per frame
        let tissue = mix_seed(self.seed, ((meta.region as u64) << 8) | meta.side.index() as u64);
        let mut trng = ChaCha8Rng::seed_from_u64(tissue);
        let rows: Vec<usize> = self.band_rows(cfg.pleural_row).filter(|&y| y < hgt).collect();
        let field: Vec<f64> = (0..rows.len() * w).map(|_| trng.sample(StandardNormal)).collect();
        for (i, &y) in rows.iter().enumerate() {
            for x in 0..w {
                let src = (x as i64 + shift_px).rem_euclid(w as i64) as usize;
                noise[y * w + x] = field[i * w + src];
            }
        }

        let pixels = mu
            .iter()
            .zip(&noise)
            .map(|(&m, &n)| (m * (1.0 + cfg.speckle_cv * n)).round().clamp(0.0, 255.0) as u8)
            .collect();
        UsFrame {
            width_px: w,
            height_px: hgt,
            pixels,
            meta,
        }
    }

    /// Frame for the current simulator state; requires probe contact.
    pub fn render(
        &self,
        state: &SimState,
        torso: &Torso,
        region: u8,
        side: Side,
        view: View,
        seq: u64,
    ) -> Result<UsFrame> {
        if !state.spring.in_contact {
            return Err(Error::NoImage);
        }
        let q = coupling_quality(state.force_n, state.incidence_rad, &self.cfg);
        let b = &torso.breathing;
        let shift = if b.enabled && b.amplitude_mm > 0.0 {
            (self.cfg.sliding_px * torso.breathing_offset(state.t_s) / b.amplitude_mm).round() as i64
        } else {
            0
        };
        let meta = FrameMeta {
            region,
            side,
            view,
            t_s: state.t_s,
            force_n: state.force_n,
            incidence_rad: state.incidence_rad,
            seq,
        };
        Ok(self.synthesize(q, shift, meta))
    }
}

/// Binary PGM (P5) with the frame metadata as a header comment.
pub fn encode_pgm(frame: &UsFrame) -> Result<Vec<u8>> {
    let meta = serde_json::to_string(&frame.meta).map_err(|e| Error::Encode(e.to_string()))?;
    let mut out = format!("P5\n# {meta}\n{} {}\n255\n", frame.width_px, frame.height_px).into_bytes();
    out.extend_from_slice(&frame.pixels);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width_px: usize,
    pub height_px: usize,
    pub pixels: Vec<u8>,
    pub comments: Vec<String>,
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let bad = |m: &str| Error::Decode(crate::protocol::message::DecodeError::Malformed(format!("PGM: {m}")));
    let mut pos = 0usize;
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&c| c == b'\n').map_or(bytes.len(), |e| pos + e);
            comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    if tokens[0] != "P5" {
        return Err(bad("not a P5 image"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != w * h {
        return Err(bad("raster size does not match header"));
    }
    Ok(Pgm {
        width_px: w,
        height_px: h,
        pixels: raster.to_vec(),
        comments,
    })
}

/// Rebuild a frame from a PGM written by [`encode_pgm`].
pub fn frame_from_pgm(bytes: &[u8]) -> Result<UsFrame> {
    let pgm = decode_pgm(bytes)?;
    let meta_line = pgm
        .comments
        .first()
        .ok_or_else(|| Error::Decode(crate::protocol::message::DecodeError::MissingField("meta".into())))?;
    let meta: FrameMeta = serde_json::from_str(meta_line)?;
    Ok(UsFrame {
        width_px: pgm.width_px,
        height_px: pgm.height_px,
        pixels: pgm.pixels,
        meta,
    })
}
