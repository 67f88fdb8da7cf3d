use std::path::PathBuf;

use thiserror::Error;

use crate::gridworld::GridPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("point ({}, {}) is occupied by a building", .0.i, .0.j)]
    Occupied(GridPoint),

    #[error("point ({}, {}) lies outside the {side}x{side} grid", .0.i, .0.j, side = .1)]
    OutOfGrid(GridPoint, usize),

    #[error("map generation failed: {0}")]
    Generation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("action index {index} out of range for {count} actions")]
    ActionOutOfRange { index: usize, count: usize },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
