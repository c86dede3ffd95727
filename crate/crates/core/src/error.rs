use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {index} has zero norm")]
    ZeroNormSample { index: usize },

    #[error("all samples have zero norm")]
    AllZero,

    #[error("noiseless observation A*h is zero; SNR undefined")]
    ZeroSignal,

    #[error("zero entry at ({row}, {col}) cannot be projected to constant modulus")]
    ZeroEntry { row: usize, col: usize },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("all {trials} search trials failed: {causes}")]
    SearchFailed { trials: usize, causes: String },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
