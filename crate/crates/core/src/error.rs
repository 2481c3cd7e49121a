use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("no data rows")]
    NoData,

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular covariance; drop collinear covariates")]
    SingularCovariance,

    #[error("rank-deficient local fit: {0}")]
    RankDeficient(String),

    #[error("weak/undefined denominator: first stage is zero")]
    ZeroFirstStage,

    #[error("no observations in window [{lo}, {hi}]")]
    NoObservations { lo: f64, hi: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
