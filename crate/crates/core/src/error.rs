use thiserror::Error;

/// Errors raised across the estimation, selection and forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel does not integrate to one (integral = {integral})")]
    NotNormalized { integral: f64 },

    #[error("invalid kernel definition: {0}")]
    InvalidKernel(String),

    #[error("operation requires a symmetric kernel, got {0}")]
    AsymmetricKernel(String),

    #[error("singular kernel: mu2 - mu1^2 = {0} is not positive")]
    SingularKernel(f64),

    #[error("kernel derivative unavailable: {0}")]
    DerivativeUnavailable(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("record {index}: {reason}")]
    Ingestion { index: usize, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("pilot estimate is identically zero")]
    DegeneratePilot,

    #[error("cross-validation score undefined at bandwidth {bandwidth}: estimator degenerate at every cell")]
    ScoreUndefined { bandwidth: f64 },

    #[error("bandwidth selection failed: {0}")]
    SelectionFailed(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimal bandwidth is unbounded: {0}")]
    UnboundedBandwidth(String),

    #[error("degenerate forecast: {0}")]
    DegenerateForecast(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from malformed input rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Ingestion { .. }
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::EmptySample(_)
                | Error::Config(_)
                | Error::InvalidKernel(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
