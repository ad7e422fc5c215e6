use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The grid side cannot be halved down to the leaf threshold.
    #[error("grid with n = {n} cannot be partitioned: {reason}")]
    IndivisibleGrid { n: usize, reason: String },

    #[error("index boxes are not admissible (their domains overlap)")]
    NotAdmissible,

    #[error("kernel is singular at coincident points")]
    SingularEvaluation,

    #[error("point {value} lies outside the interpolation interval [{lo}, {hi}]")]
    OutsideInterval { value: f64, lo: f64, hi: f64 },

    #[error("requested rank {rank} exceeds block side {side}")]
    RankTooLarge { rank: usize, side: usize },

    #[error("dense assembly of N = {n} exceeds the limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("relative error undefined: reference vector has zero norm")]
    ZeroReference,

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::ShapeMismatch(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
