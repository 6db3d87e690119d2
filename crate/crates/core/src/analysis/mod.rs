//! Image-quality metrics and session comparison statistics.

pub mod cnr;
pub mod score;
pub mod stats;
pub mod report;
