use thiserror::Error;

use crate::qpsolve::QpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("reduced susceptance matrix is singular (network disconnected)")]
    SingularNetwork,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("regression design is rank deficient (rank {rank}, need {needed}); exploration is insufficient")]
    RankDeficient { rank: usize, needed: usize },

    #[error("solver failed during {stage}: status {status}")]
    Solver { stage: String, status: QpStatus },
}

impl Error {
    /// True for errors caused by bad input data rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse(_)
                | Error::Validation(_)
                | Error::Dimension(_)
                | Error::InvalidArgument(_)
        )
    }
}
