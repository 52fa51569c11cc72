use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("privacy budget exceeded by query {label:?}: requested {requested}, remaining {remaining}")]
    BudgetExceeded {
        label: String,
        requested: f64,
        remaining: f64,
    },
    #[error("released table is empty or fully censored")]
    EmptyTable,
    #[error("partition {0:?} covers the whole population; one-vs-all needs at least two partitions")]
    DegeneratePartition(String),
    #[error("rankings share no pairs in the compared top-k")]
    EmptyIntersection,
}

impl Error {
    /// Short stable identifier, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::EmptyTable => "empty_table",
            Error::DegeneratePartition(_) => "degenerate_partition",
            Error::EmptyIntersection => "empty_intersection",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
