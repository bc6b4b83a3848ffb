use thiserror::Error;

use crate::grid::Channel;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("channel {channel} outside grid bounds C{min}..=C{max}")]
    OutOfBounds { channel: Channel, min: i32, max: i32 },

    #[error("invalid pump configuration: {0}")]
    InvalidPumps(String),

    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("time-tag stream {0} is not sorted")]
    UnsortedStream(&'static str),

    #[error("invalid user allocation: {0}")]
    InvalidAllocation(String),

    #[error("topologies are defined over different user sets")]
    MismatchedUsers,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("negative rate {rate} for link {link}")]
    NegativeRate { link: String, rate: f64 },

    #[error("invalid planning problem: {0}")]
    InvalidProblem(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
