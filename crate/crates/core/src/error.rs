use std::path::PathBuf;

use thiserror::Error;

use crate::stl::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("interval [{lower}, {upper}] exceeds trajectory duration {duration}")]
    IntervalExceedsDuration { lower: f64, upper: f64, duration: f64 },

    #[error("value {value} of `{name}` lies outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("simulation diverged at t = {time}")]
    SimulationDiverged { time: f64 },

    #[error("channel sets differ: {0}")]
    ChannelMismatch(String),

    #[error("trajectories do not overlap in time")]
    NoOverlap,

    #[error("evaluation ({task}, {param}) failed: {source}")]
    Evaluation {
        task: usize,
        param: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("falsification failed: {0}")]
    FalsificationFailed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("external simulator `{program}`: {message}")]
    Adapter { program: PathBuf, message: String },

    #[error("schema version {found} is not supported (expected {expected}); {guidance}")]
    SchemaVersion {
        found: u64,
        expected: u64,
        guidance: String,
    },

    #[error("malformed document at byte {offset}: {message}")]
    Document { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
