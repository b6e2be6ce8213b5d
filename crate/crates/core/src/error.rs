use thiserror::Error;

/// Errors raised while building or verifying approximants.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum ShapeError {
    #[error("inflection set must hold an even, nonzero number of points, got {0}")]
    OddInflectionCount(usize),

    #[error("inflection point {0} lies outside [-pi, pi)")]
    PointOutOfRange(f64),

    #[error("inflection points must be distinct, {0} repeats")]
    DuplicatePoint(f64),

    #[error("unknown builtin function '{0}'")]
    UnknownFunction(String),

    #[error("sampled function needs at least {min} samples per period, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("sample abscissae must be uniform over one period: {0}")]
    NonUniformSamples(String),

    #[error("could not read samples: {0}")]
    SampleInput(String),

    #[error("n = {n} is below the admissible minimum {required} for this inflection set")]
    BelowMinimumN { n: usize, required: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate normalizing integral {value:e} for the step centred at index {index}")]
    DegenerateDenominator { index: i64, value: f64 },

    #[error("correction divisor {value:e} at inflection point {point} is too small")]
    DivisorTooSmall { point: f64, value: f64 },

    #[error("mixing weight {value} for index {index} is outside [0, 1]")]
    AlphaOutOfRange { index: i64, value: f64 },

    #[error("no selection rule matches index {0}")]
    IncompleteCase(i64),

    #[error("sign violation at x = {location}: margin {margin:e}")]
    SignViolation { location: f64, margin: f64 },
}

pub type Result<T> = std::result::Result<T, ShapeError>;
