//! Seeded inputs shared by the benchmarks.

use coala_core::analysis::{conditioned_data, gaussian, logspace, rng, with_spectrum};
use coala_core::{DenseMatrix, ProblemInstance};

/// `m x n` weights with a decaying spectrum and `n x k` data of condition
/// `condition`.
pub fn instance(m: usize, n: usize, k: usize, rank: usize, condition: f64) -> ProblemInstance {
    let mut g = rng(7);
    let w = with_spectrum(m, n, &logspace(0.0, -2.0, m.min(n)), &mut g).expect("valid spectrum");
    let x = conditioned_data(n, k, condition, &mut g).expect("valid data");
    ProblemInstance::new(w, x, rank).expect("valid instance")
}

/// Sample-major Gaussian data (`k x n`).
pub fn samples(n: usize, k: usize) -> DenseMatrix {
    gaussian(k, n, &mut rng(11))
}
