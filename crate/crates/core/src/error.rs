use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("groups overlap at observation {0}")]
    OverlappingGroups(usize),

    #[error("group is empty")]
    EmptyGroup,

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("covariance is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("covariance is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),

    /// The observed statistic fell outside the computed truncation set. This
    /// means the conditioning constraints disagree with the clustering run
    /// that produced them.
    #[error("observed statistic {statistic} is not contained in the truncation set")]
    AnchorExcluded { statistic: f64 },

    #[error("numerically degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("numerical routine did not converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
