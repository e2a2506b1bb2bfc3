use thiserror::Error;

/// Errors produced by dataset validation, estimation and I/O.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmlsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("too few rows: {rows} rows for {cols} covariates (need at least cols + 2)")]
    TooFewRows { rows: usize, cols: usize },

    #[error("design matrix is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("selection size {n} is too small (need at least {min})")]
    NTooSmall { n: usize, min: usize },

    #[error("cross-validation fold {fold} is empty")]
    EmptyFold { fold: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("prediction mode `mid` requires a lower expectation estimate")]
    MissingLowerExpectation,

    #[error("m = {m} exceeds the number of test points {len}")]
    MTooLarge { m: usize, len: usize },

    #[error("top-{m} observations are constant; R^2 is undefined")]
    ZeroDenominator { m: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("cannot parse cell at row {row}, column `{column}`: {value:?}")]
    UnparseableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl PmlsError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            PmlsError::DimensionMismatch(_) => "DimensionMismatch",
            PmlsError::NonFinite(_) => "NonFinite",
            PmlsError::TooFewRows { .. } => "TooFewRows",
            PmlsError::RankDeficient { .. } => "RankDeficient",
            PmlsError::NTooSmall { .. } => "NTooSmall",
            PmlsError::EmptyFold { .. } => "EmptyFold",
            PmlsError::InvalidConfig(_) => "InvalidConfig",
            PmlsError::MissingLowerExpectation => "MissingLowerExpectation",
            PmlsError::MTooLarge { .. } => "MTooLarge",
            PmlsError::ZeroDenominator { .. } => "ZeroDenominator",
            PmlsError::SchemaMismatch(_) => "SchemaMismatch",
            PmlsError::UnparseableCell { .. } => "UnparseableCell",
            PmlsError::Numerical(_) => "Numerical",
            PmlsError::Io(_) => "Io",
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PmlsError::InvalidConfig(_) | PmlsError::MissingLowerExpectation => 2,
            PmlsError::DimensionMismatch(_)
            | PmlsError::NonFinite(_)
            | PmlsError::TooFewRows { .. }
            | PmlsError::SchemaMismatch(_)
            | PmlsError::UnparseableCell { .. }
            | PmlsError::MTooLarge { .. }
            | PmlsError::EmptyFold { .. }
            | PmlsError::Io(_) => 3,
            PmlsError::RankDeficient { .. }
            | PmlsError::NTooSmall { .. }
            | PmlsError::ZeroDenominator { .. }
            | PmlsError::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for PmlsError {
    fn from(e: std::io::Error) -> Self {
        PmlsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PmlsError>;
