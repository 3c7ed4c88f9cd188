use thiserror::Error;

/// Broad failure class, used by front ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Solver,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("panel is unbalanced: missing cell ({unit}, {period})")]
    UnbalancedPanel { unit: String, period: i64 },

    #[error("duplicate cell ({unit}, {period})")]
    DuplicateCell { unit: String, period: i64 },

    #[error("zero denominator at ({unit}, {period})")]
    DivisionByZero { unit: String, period: i64 },

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("panel has no post-treatment period")]
    NoPostPeriod,

    #[error("at least 2 pre-treatment periods are required, found {0}")]
    InsufficientPrePeriods(usize),

    #[error("at least {required} donors are required, found {found}")]
    InsufficientDonors { required: usize, found: usize },

    #[error("non-finite value in solver input")]
    NonFiniteInput,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("donor pool is empty")]
    EmptyDonorPool,

    #[error("treated unit `{0}` appears in the exclusion list")]
    InvalidExclusion(String),

    #[error("invalid donor criteria: {0}")]
    InvalidCriteria(String),

    #[error("placebo distribution is degenerate: {0}")]
    DegenerateDistribution(String),

    #[error("brute-force oracle supports at most 3 columns, got {0}")]
    TooLargeForOracle(usize),

    #[error("invalid characteristics table: {0}")]
    InvalidCharacteristics(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::DivisionByZero { .. } => "DivisionByZero",
            Error::UnknownUnit(_) => "UnknownUnit",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::InvalidPanel(_) => "InvalidPanel",
            Error::NoPostPeriod => "NoPostPeriod",
            Error::InsufficientPrePeriods(_) => "InsufficientPrePeriods",
            Error::InsufficientDonors { .. } => "InsufficientDonors",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::EmptyDonorPool => "EmptyDonorPool",
            Error::InvalidExclusion(_) => "InvalidExclusion",
            Error::InvalidCriteria(_) => "InvalidCriteria",
            Error::DegenerateDistribution(_) => "DegenerateDistribution",
            Error::TooLargeForOracle(_) => "TooLargeForOracle",
            Error::InvalidCharacteristics(_) => "InvalidCharacteristics",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Parse { .. } => "ParseError",
            Error::Csv(_) => "CsvError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidCriteria(_)
            | Error::InvalidExclusion(_)
            | Error::InsufficientDonors { .. }
            | Error::InvalidSpec(_)
            | Error::TooLargeForOracle(_) => ErrorClass::Config,
            Error::NonFiniteInput | Error::DegenerateDistribution(_) => ErrorClass::Solver,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
