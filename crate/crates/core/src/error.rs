use thiserror::Error;

pub type Result<T, E = BemError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no background pixels to evaluate (N_bg = 0)")]
    EmptyBackground,

    #[error("degenerate feature vector: pooled features have zero norm")]
    DegenerateFeature,

    #[error("degenerate prototype: mean of memory entries has zero norm")]
    DegeneratePrototype,

    #[error("average precision undefined: no ground-truth boxes")]
    UndefinedAp,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BemError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BemError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BemError::InvalidConfig(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        BemError::Data(msg.into())
    }

    /// True for errors caused by configuration rather than by the data being processed.
    pub fn is_config_error(&self) -> bool {
        matches!(self, BemError::InvalidConfig(_))
    }
}
