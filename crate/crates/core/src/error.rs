use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible shapes: {0}")]
    IncompatibleShape(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("training diverged on client {client} at epoch {epoch}: {detail}")]
    TrainingDiverged {
        client: usize,
        epoch: usize,
        detail: String,
    },

    #[error("partition infeasible: {0}")]
    PartitionInfeasible(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::IncompatibleShape(msg.into())
    }
}
