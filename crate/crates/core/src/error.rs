use std::io;

use thiserror::Error;

use crate::protocol::message::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the model (e.g. a cranio-caudal
    /// coordinate beyond the chest length, a joint vector beyond its limits).
    #[error("domain error: {0}")]
    Domain(String),

    /// A request that is well-formed but not allowed in the current protocol state.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("arc angle {alpha_rad:.4} rad is outside the reachable range ±{alpha_max_rad:.4} rad")]
    Reach { alpha_rad: f64, alpha_max_rad: f64 },

    #[error("no image: probe is not in contact")]
    NoImage,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("sample error: {0}")]
    Sample(String),

    #[error("state error: {0}")]
    State(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("replay error: {0}")]
    Replay(String),

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("encode error: {0}")]
    Encode(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
