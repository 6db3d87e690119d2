//! Contrast-to-noise ratio of the pleural line against its surroundings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::UsFrame;

/// Variance floor for the CNR denominator.
pub const CNR_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 + self.width <= width && self.y0 + self.height <= height
    }

    pub fn overlaps(&self, other: &Roi) -> bool {
        self.x0 < other.x0 + other.width
            && other.x0 < self.x0 + self.width
            && self.y0 < other.y0 + other.height
            && other.y0 < self.y0 + self.height
    }

    pub fn pixels<'a>(&'a self, frame: &'a UsFrame) -> impl Iterator<Item = u8> + 'a {
        (self.y0..self.y0 + self.height).flat_map(move |y| {
            let row = y * frame.width_px;
            frame.pixels[row + self.x0..row + self.x0 + self.width].iter().copied()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnrResult {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub mu_b: f64,
    pub sigma_b: f64,
    pub cnr: f64,
}

/// Mean and sample standard deviation, accumulated with Welford's update.
fn mean_sd(values: impl Iterator<Item = u8>) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let x = v as f64;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt(), n)
}

pub fn validate_rois(frame: &UsFrame, roi_p: &Roi, roi_b: &Roi) -> Result<()> {
    for (name, r) in [("pleural", roi_p), ("background", roi_b)] {
        if !r.fits(frame.width_px, frame.height_px) {
            return Err(Error::Geometry(format!("{name} ROI {r:?} exceeds the image")));
        }
        if r.area() < 4 {
            return Err(Error::Geometry(format!("{name} ROI {r:?} has fewer than 4 pixels")));
        }
    }
    if roi_p.overlaps(roi_b) {
        return Err(Error::Geometry("ROIs overlap".into()));
    }
    Ok(())
}

/// `|μ_p − μ_b| / √(σ_p² + σ_b²)` over the two regions.
pub fn cnr(frame: &UsFrame, roi_p: &Roi, roi_b: &Roi) -> Result<CnrResult> {
    validate_rois(frame, roi_p, roi_b)?;
    let (mu_p, sigma_p, _) = mean_sd(roi_p.pixels(frame));
    let (mu_b, sigma_b, _) = mean_sd(roi_b.pixels(frame));
    let denom = (sigma_p * sigma_p + sigma_b * sigma_b).sqrt().max(CNR_EPSILON);
    Ok(CnrResult {
        mu_p,
        sigma_p,
        mu_b,
        sigma_b,
        cnr: (mu_p - mu_b).abs() / denom,
    })
}
