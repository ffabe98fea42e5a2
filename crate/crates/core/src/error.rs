use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent or unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical procedure failed (factorization, conditioning, fit quality).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Evaluation requested outside the domain a model was built on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("current-split solver did not converge (last residual {residual:.3e} A)")]
    Solver { residual: f64 },

    /// Every cell in the module is at or above full charge.
    #[error("charge complete: all cells at full state of charge")]
    ChargeComplete,

    #[error("empty profile: {0}")]
    EmptyProfile(String),

    /// Zero variance, nonpositive self-information and similar degeneracies.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// An operation was applied to a feature in the wrong selection state.
    #[error("selection state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by user-supplied configuration rather than data or numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Solver { .. } | Error::Degenerate(_)
        )
    }
}
