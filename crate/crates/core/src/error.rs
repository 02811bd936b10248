use thiserror::Error;

use crate::profiler::PhaseId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("episode already finished at step {0}")]
    EpisodeFinished(usize),
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("replay buffer holds {len} transitions, need at least {needed}")]
    BufferUnderfilled { len: usize, needed: usize },
    #[error("phase {0:?} is already being timed")]
    NestedScope(PhaseId),
    #[error("phase {0:?} is not a timed leaf")]
    NotALeaf(PhaseId),
    #[error("report has no timed phases")]
    EmptyReport,
    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),
    #[error("agent counts must double at each step: {0:?}")]
    NonDoubling(Vec<usize>),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
