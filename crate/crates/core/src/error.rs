use thiserror::Error;

/// Errors raised anywhere in the controller stack or the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("path parameter {theta} outside [{lo}, {hi}]")]
    Domain { theta: f64, lo: f64, hi: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("zero thrust vector, attitude is undefined")]
    DegenerateThrust,

    #[error("integration produced a non-finite state at t = {t}")]
    IntegrationFault { t: f64 },

    #[error("kernel matrix is not positive definite (noise level too small for the window)")]
    IllConditionedKernel,

    #[error("gain configuration: {0}")]
    GainConfiguration(String),

    #[error("input matrix G is singular")]
    Linearization,

    #[error("quadratic program is infeasible")]
    QpInfeasible,

    #[error("quadratic program Hessian is not positive definite")]
    QpNotConvex,

    #[error("quadratic program did not terminate within {0} iterations")]
    QpIterationLimit(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
