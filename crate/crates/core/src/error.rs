use thiserror::Error;

/// Errors produced by the tensor algebra, decomposition and adapter routines.
#[derive(Debug, Error)]
pub enum TcurError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("residual imaginary part {residual:.3e} exceeds tolerance {bound:.3e}; spectrum is not conjugate-symmetric")]
    ResidualImaginary { residual: f64, bound: f64 },

    #[error("reference tensor has zero Frobenius norm")]
    ZeroReference,

    #[error("tensor is zero; scores are undefined")]
    ZeroTensor,

    #[error("rank {rank} out of range (must satisfy 1 <= r <= {max})")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: loss {loss:.3e} exceeds 1e6 x initial loss {initial:.3e}")]
    DivergenceDetected { step: usize, loss: f64, initial: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TcurError> = std::result::Result<T, E>;
