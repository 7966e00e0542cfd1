use thiserror::Error;

/// Errors raised by the numerical kernels, dropout schemes and trainer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix entry at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("SVD did not converge after {sweeps} sweeps (relative off-diagonal mass {off_diagonal:e})")]
    Convergence { sweeps: usize, off_diagonal: f64 },

    #[error("block size {block} does not divide width {width}")]
    BlockPartition { width: usize, block: usize },

    #[error("degenerate dropout scheme: {0}")]
    DegenerateScheme(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("degenerate factors: {0}")]
    DegenerateFactor(String),

    #[error("exhaustive enumeration over {variables} binary variables exceeds the cap of {cap}")]
    EnumerationTooLarge { variables: usize, cap: usize },

    #[error("training diverged with learning rate {eta:e} at iteration {iteration}")]
    Divergence { eta: f64, iteration: usize },

    #[error("rank deficiency: smallest singular value {sigma_min:e} is below {threshold:e}")]
    RankDeficiency { sigma_min: f64, threshold: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
