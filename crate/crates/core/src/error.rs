use std::io;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// A malformed IDX file. `field` names the header field or section at fault.
    #[error("malformed IDX data in `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("matrix is zero")]
    ZeroMatrix,

    /// The requested state has zero norm and cannot be prepared.
    #[error("cannot normalize a zero vector: {0}")]
    ZeroVector(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("projection failed: {0}")]
    ProjectionFailed(String),

    /// The automatic threshold search could not isolate the requested number of
    /// slow directions.
    #[error(
        "threshold search could not isolate {wanted} directions; bracket [{lo:.6e}, {hi:.6e}] keeps {kept}"
    )]
    ThresholdSearch {
        wanted: usize,
        kept: usize,
        lo: f64,
        hi: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
