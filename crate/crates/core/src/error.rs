use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("normalized angle {0} outside [-1, 1]")]
    AngleOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("beam list is empty")]
    EmptyBeamSet,

    #[error("beams have a null at theta = {theta}: stacked response norm {norm_sq:e} too small")]
    DegenerateDirection { theta: f64, norm_sq: f64 },

    #[error("every bin in window [{lo}, {hi}] is degenerate for the transmitted beams")]
    EstimationFailed { lo: usize, hi: usize },

    #[error("beams carry no angle information at theta = {theta}")]
    InformationDeficit { theta: f64 },

    #[error("no beam pair has finite average CRLB under the given prior")]
    SelectionInfeasible,

    #[error("lookup table has no entries")]
    EmptyLookupTable,

    #[error("malformed lookup table: {0}")]
    MalformedTable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
