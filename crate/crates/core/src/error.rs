use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("player count {0} outside supported range 1..={max}", max = crate::qcore::MAX_PLAYERS)]
    InvalidPlayerCount(usize),

    #[error("expected {expected} amplitudes for {n_players} players, found {found}")]
    AmplitudeCount {
        n_players: usize,
        expected: usize,
        found: usize,
    },

    #[error("state is not normalized (norm {norm})")]
    Unnormalized { norm: f64 },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("probability {value} at outcome {index} is negative beyond rounding")]
    NegativeProbability { index: usize, value: f64 },

    #[error("invalid basis label {0:?}: expected a string of H and V")]
    InvalidKet(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed state file {path}: {reason}")]
    MalformedStateFile { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
