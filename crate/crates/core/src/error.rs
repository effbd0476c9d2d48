use thiserror::Error;

/// Matrix an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Transition,
    Emission,
}

impl core::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MatrixKind::Transition => f.write_str("transition"),
            MatrixKind::Emission => f.write_str("emission"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(&'static str),

    #[error("{matrix} matrix row {row} sums to {sum}, expected 1")]
    RowSum { matrix: MatrixKind, row: usize, sum: f64 },

    #[error("{matrix} matrix entry ({row}, {col}) = {value} is outside [0, 1]")]
    NegativeEntry {
        matrix: MatrixKind,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("index {index} at position {position} is out of range (limit {limit})")]
    IndexOutOfRange {
        position: usize,
        index: usize,
        limit: usize,
    },

    #[error("observation at filter step {step} has zero likelihood under the parameters")]
    DegenerateLikelihood { step: usize },

    #[error("{paths} hidden paths exceed the enumeration guard")]
    PathExplosion { paths: u128 },

    #[error("{candidates} candidate sequences exceed the enumeration guard")]
    CandidateExplosion { candidates: u128 },

    #[error("permutation has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("not a permutation of 0..{degree}")]
    InvalidPermutation { degree: usize },

    #[error("sequence too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
