use thiserror::Error;

use crate::acid::ConstraintReport;
use crate::scm::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes. The CLI maps these onto its exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input files, unknown columns, I/O.
    Input,
    /// A model or interventional distribution that violates its invariants
    /// or an operation's structural precondition.
    Validation,
    /// Estimation or closed-form evaluation that is numerically undefined.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid SCM: {0}")]
    InvalidScm(ValidationReport),

    #[error("invalid ACID: {0}")]
    InvalidAcid(ConstraintReport),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("undefined ratio: aggregation weight alpha[{index}] is zero")]
    ZeroAggregationWeight { index: usize },

    #[error("not proportional: beta[{index}]/alpha[{index}] = {ratio} differs from tau = {tau}")]
    NotProportional { index: usize, ratio: f64, tau: f64 },

    #[error("intervention value {0} is outside the support of the ACID")]
    OutOfSupport(f64),

    #[error("irrelevant instrument: {0}")]
    IrrelevantInstrument(String),

    #[error("weak/irrelevant instrument: {0}")]
    WeakInstrument(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("under-identified: {0}")]
    UnderIdentified(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable snake_case identifier of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidScm(_) => "invalid_scm",
            Error::InvalidAcid(_) => "invalid_acid",
            Error::Dimension(_) => "dimension",
            Error::Precondition(_) => "precondition",
            Error::ZeroAggregationWeight { .. } => "zero_aggregation_weight",
            Error::NotProportional { .. } => "not_proportional",
            Error::OutOfSupport(_) => "out_of_support",
            Error::IrrelevantInstrument(_) => "irrelevant_instrument",
            Error::WeakInstrument(_) => "weak_instrument",
            Error::RankDeficient(_) => "rank_deficient",
            Error::UnderIdentified(_) => "under_identified",
            Error::DegenerateVariance(_) => "degenerate_variance",
            Error::UnknownColumn(_) => "unknown_column",
            Error::Config(_) => "config",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Csv(_) | Error::Io(_) | Error::UnknownColumn(_) => {
                ErrorKind::Input
            }
            Error::InvalidScm(_)
            | Error::InvalidAcid(_)
            | Error::Dimension(_)
            | Error::Precondition(_)
            | Error::ZeroAggregationWeight { .. }
            | Error::NotProportional { .. }
            | Error::OutOfSupport(_)
            | Error::UnderIdentified(_) => ErrorKind::Validation,
            Error::IrrelevantInstrument(_)
            | Error::WeakInstrument(_)
            | Error::RankDeficient(_)
            | Error::DegenerateVariance(_) => ErrorKind::Numerical,
        }
    }
}
