use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown builtin g-function `{name}` (valid: {valid})")]
    UnknownBuiltin { name: String, valid: String },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("segments leave a coverage gap at x = {at}")]
    CoverageGap { at: f64 },

    #[error("segments overlap at x = {at}")]
    Overlap { at: f64 },

    #[error("g-identity residual {residual:e} at x = {at} exceeds tolerance {tolerance:e}")]
    IdentityResidual {
        residual: f64,
        at: f64,
        tolerance: f64,
    },

    #[error("grid spacing 2^-{level} is coarser than delta = {delta}")]
    GridTooCoarse { delta: f64, level: u32 },

    #[error("transfer operator needs a grid of level >= 1")]
    LevelZero,

    #[error("grid level {total} exceeds the configured cap {cap}")]
    MemoryCap { total: u32, cap: u32 },

    #[error("g-function is not good: {0}")]
    NotGood(String),

    #[error("zero set is not declared complete")]
    IncompleteZeroSpec,

    #[error("modulus profile has no entry at delta = {delta:e}")]
    MissingModulus { delta: f64 },

    #[error("g(0) = {value:e} is not zero; no power-law scaling at the origin")]
    NoPowerLawScaling { value: f64 },

    #[error("level {level} cannot resolve frequency {frequency} (need level >= {required})")]
    Aliasing {
        frequency: usize,
        level: u32,
        required: u32,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
