use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("box does not intersect the frame")]
    EmptyBox,
    #[error("could not place negative box {placed} of {requested} after {attempts} attempts")]
    SamplingExhausted {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("histogram shape mismatch: {0}")]
    HistogramShape(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("single-class data: {0}")]
    SingleClass(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("no external proposals for frame `{0}`")]
    MissingProposals(String),
}
