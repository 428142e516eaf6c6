use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("invalid trajectory {id}: {reason}")]
    InvalidTrajectory { id: usize, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("maze parse error at line {line}, column {column}: {message}")]
    MazeParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unreachable goal")]
    UnreachableGoal,

    #[error("door on wall cell (door {0})")]
    DoorOnWall(u8),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("step after done")]
    StepAfterDone,

    #[error("route failed: {label} ({reason})")]
    RouteFailed { label: String, reason: String },

    #[error("pad shorter than trajectory ({pad} < {len})")]
    PadTooShort { pad: usize, len: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate dataset: identical trajectories (row {0})")]
    DegenerateDataset(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("divergence at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("non-finite action {0:?}")]
    NonFiniteAction([f64; 2]),

    #[error("property unsatisfiable on dataset")]
    PropertyUnsatisfiable,

    #[error("unknown metric {0:?}")]
    UnknownMetric(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
