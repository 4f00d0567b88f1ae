use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate population: need at least 2 units, got {0}")]
    DegeneratePopulation(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank deficiency at column {column} ({name})")]
    RankDeficient { column: usize, name: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular covariance for {0}; orthogonalize or drop the collinear column")]
    SingularCovariance(String),

    #[error("no acceptable assignment after {draws} draws (best statistic {best:.6}, threshold {threshold:.6})")]
    MaxDrawsExhausted { draws: u64, best: f64, threshold: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical or feasibility kind, as opposed to
    /// bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NotPositiveDefinite(_)
                | Error::SingularCovariance(_)
                | Error::MaxDrawsExhausted { .. }
                | Error::Infeasible(_)
                | Error::DegeneratePopulation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
