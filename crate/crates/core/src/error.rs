use std::fmt;

use crate::inr::InrModel;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("training diverged at epoch {}", .0.epoch)]
    Diverged(Box<Divergence>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Payload of [`Error::Diverged`]: where training blew up and the last
/// parameters that produced a finite loss.
pub struct Divergence {
    pub epoch: usize,
    pub last_good: InrModel,
}

impl fmt::Debug for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Divergence").field("epoch", &self.epoch).finish_non_exhaustive()
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
