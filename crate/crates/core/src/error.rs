use std::path::PathBuf;

/// Errors produced by the matrix container, solvers, TSQR and studies.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("columns are not orthonormal: ||A^T A - I||_F = {deviation:e} exceeds {tolerance:e}")]
    NotOrthonormal { deviation: f64, tolerance: f64 },

    #[error("calibration matrix is rank deficient (sigma_min/sigma_max = {ratio:e}); use the inversion-free COALA solver instead")]
    RankDeficient { ratio: f64 },

    #[error("Cholesky breakdown: non-positive pivot at index {pivot}")]
    CholeskyBreakdown { pivot: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("zero singular gap at rank {rank}: sigma_r = sigma_(r+1) = {sigma:e}")]
    ZeroGap { rank: usize, sigma: f64 },

    #[error("malformed matrix file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by floating-point breakdown rather than
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::CholeskyBreakdown { .. } | Error::Numerical(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
