use thiserror::Error;

/// Errors produced by the tensor factor library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {mode} out of range for an order-{order} tensor")]
    ModeIndex { mode: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank {rank} out of range 1..={max}")]
    Rank { rank: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("basis columns are not orthonormal (max deviation {0:.3e})")]
    Basis(f64),

    #[error("lag window h0 = {h0} is invalid for a series of length {len}")]
    Lag { h0: usize, len: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("ingestion error at row {row}: {msg}")]
    Ingest { row: usize, msg: String },

    #[error("rate-fit data error: {0}")]
    FitData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command line front end.
    ///
    /// 2 is reserved for usage errors, 3 for bad input data, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ModeIndex { .. }
            | Error::Rank { .. }
            | Error::Lag { .. }
            | Error::InvalidSpec(_) => 2,
            Error::Dimension(_)
            | Error::Degenerate(_)
            | Error::Ingest { .. }
            | Error::FitData(_)
            | Error::Format(_)
            | Error::Io(_) => 3,
            Error::NonFinite(_) | Error::Basis(_) => 4,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
