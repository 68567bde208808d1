use thiserror::Error;

pub type Result<T> = std::result::Result<T, IcqrError>;

#[derive(Debug, Error)]
pub enum IcqrError {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("row {index}: {reason}")]
    InvalidObservation { index: usize, reason: String },

    #[error("quantile level must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("bandwidth problem: {0}")]
    Bandwidth(String),

    #[error("no finite endpoints in the dataset; the support grid would be empty")]
    EmptyGrid,

    #[error("design matrix is rank deficient; dependent columns: {dependent_columns:?}")]
    RankDeficient { dependent_columns: Vec<usize> },

    #[error("fewer than {needed} rows carry positive weight (found {found})")]
    TooFewRows { needed: usize, found: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("{failed} of {total} replicates failed, above the {limit_pct}% limit")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit_pct: usize,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<IcqrError>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IcqrError {
    /// Wraps the error with the name of the component that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        IcqrError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for input/validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            IcqrError::Stage { source, .. } => source.exit_code(),
            IcqrError::EmptyGrid
            | IcqrError::Bandwidth(_)
            | IcqrError::RankDeficient { .. }
            | IcqrError::TooFewRows { .. }
            | IcqrError::Solver(_)
            | IcqrError::TooManyFailures { .. } => 3,
            _ => 2,
        }
    }
}
