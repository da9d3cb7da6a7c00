//! Inversion-free weighted low-rank approximation.
//!
//! Solves `min ||(W - W')X||_F` over `rank(W') <= r` without ever forming or
//! inverting the Gram matrix `X X^T`: the calibration data is reduced to the R
//! factor of a QR decomposition of `X^T` (in memory or chunk by chunk), and the
//! optimal `W'` is the projection of `W` onto the leading left singular vectors
//! of `W R^T`.
//!
//! ```
//! use coala_core::{solve_coala, DenseMatrix, ProblemInstance};
//!
//! let w = DenseMatrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
//! let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
//! let solution = solve_coala(&ProblemInstance::new(w, x, 1).unwrap()).unwrap();
//! assert!((solution.approximation().get(0, 0) - 3.0).abs() < 1e-12);
//! ```

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod io;
mod linalg;
pub mod matcore;
pub mod oracle;
pub mod tsqr;
pub mod wlra;

pub use error::{Error, Result};
pub use matcore::{
    objective_value, regularized_objective, subspace_distance, subspace_distance_with, DenseMatrix,
    FactorPair, Precision, ProblemInstance, SpectralSummary, Tolerances,
};
pub use tsqr::{
    augment_with_regularizer, tsqr_sequential, tsqr_tree, ChunkSource, RFactor, TsqrPlan,
    TsqrStrategy,
};
pub use wlra::{
    qr_reduce, solve, solve_alpha, solve_coala, solve_gram_cholesky, solve_gram_svd,
    solve_projection, solve_reference, solve_regularized, PathTaken, Solution, SolveStatus,
    SolverMethod,
};
