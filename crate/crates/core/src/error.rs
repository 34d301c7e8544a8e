//! Error types shared across the crate.
//!
//! Library code never panics on bad input: every fallible operation returns
//! [`Result`] with a [`PadError`] variant that names the offending value.
//! Panics are reserved for internal invariant violations (plain `assert!` on
//! states the module itself is responsible for).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, PadError>;

/// One rule violation found while validating a submission file.
///
/// Row numbers are 1-based and count data rows (the header is row 0), so they
/// match what a spreadsheet user sees after the header line.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The header line is missing or spells the wrong column names.
    BadHeader { found: String },
    /// A data row does not have exactly two fields.
    WrongColumnCount { row: usize, found: usize },
    /// A score field failed to parse as a finite number.
    UnparsableScore { row: usize, value: String },
    /// A score parsed but lies outside `[0, 1]`.
    ScoreOutOfRange { row: usize, value: f64 },
    /// The same sample id appears on more than one row.
    DuplicateId { row: usize, id: String },
    /// A row names a sample id that is not part of the expected set.
    UnknownId { row: usize, id: String },
    /// Sample ids the submission was required to cover but did not.
    MissingIds { ids: Vec<String> },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BadHeader { found } => write!(f, "bad header {found:?}"),
            Violation::WrongColumnCount { row, found } => {
                write!(f, "row {row}: expected 2 fields, found {found}")
            }
            Violation::UnparsableScore { row, value } => {
                write!(f, "row {row}: score {value:?} is not a finite number")
            }
            Violation::ScoreOutOfRange { row, value } => {
                write!(f, "row {row}: score {value} is outside [0, 1]")
            }
            Violation::DuplicateId { row, id } => {
                write!(f, "row {row}: duplicate sample id {id:?}")
            }
            Violation::UnknownId { row, id } => {
                write!(f, "row {row}: unknown sample id {id:?}")
            }
            Violation::MissingIds { ids } => {
                write!(f, "{} required sample id(s) missing (first: {:?})", ids.len(), ids.first())
            }
        }
    }
}

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum PadError {
    /// A capture-folder name did not match the `G_S_C_E_T` layout.
    #[error("invalid track name {name:?}: {reason}")]
    TrackName { name: String, reason: String },

    /// A quality score left the closed unit interval.
    #[error("quality score {score} for sample {id:?} is outside [0, 1]")]
    QualityOutOfRange { id: String, score: f64 },

    /// An operation that needs both classes saw only one.
    #[error("{context}: requires samples from both classes")]
    MissingClass { context: String },

    /// A rate or statistic is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A caller-supplied parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two containers that must agree in shape do not.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A feature vector with zero norm reached a cosine computation.
    #[error("zero-norm vector in {context}")]
    ZeroVector { context: String },

    /// Two id sets that must be equal are not.
    #[error("id sets disagree in {context}: {missing} missing, {extra} unexpected")]
    IdMismatch { context: String, missing: usize, extra: usize },

    /// A label lookup was attempted outside the phase's visibility rules.
    #[error("label access denied: {split} labels are hidden during the {phase} phase")]
    AccessDenied { split: String, phase: String },

    /// A team ran out of submission attempts for the current day.
    #[error("submission budget exhausted for team {team:?} on day {day} (limit {limit})")]
    BudgetExceeded { team: String, day: u32, limit: u32 },

    /// A submission file broke one or more format rules.
    #[error("invalid submission: {} violation(s), first: {first}", .violations.len(), first = .violations[0])]
    SubmissionInvalid { violations: Vec<Violation> },

    /// A configuration value or combination is unusable.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A covariance matrix was not positive definite.
    #[error("covariance matrix is not positive definite")]
    DegenerateCovariance,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image decode/encode error: {0}")]
    Image(#[from] image::ImageError),
}

impl PadError {
    /// Shorthand for [`PadError::InvalidParameter`] with a formatted message.
    pub fn param(msg: impl Into<String>) -> Self {
        PadError::InvalidParameter(msg.into())
    }

    /// Shorthand for [`PadError::Config`] with a formatted message.
    pub fn config(msg: impl Into<String>) -> Self {
        PadError::Config(msg.into())
    }
}
