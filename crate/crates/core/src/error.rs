use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("target noise level {target} is infeasible; attainable maximum is {attainable}")]
    InfeasibleTarget { target: f64, attainable: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("infeasible configuration, condition ({condition}) violated: {detail}")]
    InfeasibleConfiguration { condition: u8, detail: String },

    #[error("missing oracle data: {0}")]
    MissingOracle(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the inputs a user supplied rather than by a
    /// failure while running.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::InfeasibleTarget { .. }
            | Error::Unsupported(_)
            | Error::InfeasibleConfiguration { .. }
            | Error::MissingOracle(_)
            | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            Error::TrainingDiverged { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => false,
        }
    }

    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
