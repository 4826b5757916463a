use std::fmt;

/// Factorization stage that can lose positive definiteness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    /// Landmark covariance block.
    LandmarkBlock,
    /// Block-diagonal correction block with the given index.
    CorrectionBlock(usize),
    /// Gram factor of the whitened cross-covariance.
    FactorL,
    /// Inner factor `M` of the symmetric factorization.
    FactorM,
    /// Trailing factor `G` of the symmetric factorization.
    FactorG,
    /// Conditional covariance block with the given index.
    Conditional(usize),
    /// Any other dense factorization.
    Dense,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::LandmarkBlock => write!(f, "landmark block"),
            Stage::CorrectionBlock(l) => write!(f, "correction block {l}"),
            Stage::FactorL => write!(f, "factor L"),
            Stage::FactorM => write!(f, "factor M"),
            Stage::FactorG => write!(f, "factor G"),
            Stage::Conditional(l) => write!(f, "conditional block {l}"),
            Stage::Dense => write!(f, "dense matrix"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("Cholesky factorization failed at {0}")]
    CholeskyFailure(Stage),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate anisotropy: averaged matrix is singular")]
    SingularAnisotropy,
    #[error("eigenvalue {value:e} at position {index} is not positive")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("{source} (parameters {theta:?})")]
    AtParameters { theta: Vec<f64>, source: Box<Error> },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::CholeskyFailure(_) => "cholesky_failure",
            Error::InvalidInput(_) => "invalid_input",
            Error::SingularAnisotropy => "singular_anisotropy",
            Error::NonPositiveEigenvalue { .. } => "non_positive_eigenvalue",
            Error::AtParameters { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
