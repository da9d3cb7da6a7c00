#![allow(dead_code)]

use coala_core::analysis::{conditioned_data, gaussian, logspace, rng, with_spectrum};
use coala_core::{DenseMatrix, Precision};

pub fn diag(values: &[f64]) -> DenseMatrix {
    let n = values.len();
    DenseMatrix::from_fn(n, n, Precision::Double, |i, j| if i == j { values[i] } else { 0.0 })
        .unwrap()
}

pub fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    gaussian(rows, cols, &mut rng(seed))
}

/// Weights with a clear spectrum and calibration data of the given condition.
pub fn instance(m: usize, n: usize, k: usize, condition: f64, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let mut g = rng(seed);
    let w = with_spectrum(m, n, &logspace(0.0, -1.0, m.min(n)), &mut g).unwrap();
    let x = conditioned_data(n, k, condition, &mut g).unwrap();
    (w, x)
}

pub fn sub(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.shape(), b.shape());
    let d = a.to_f64_vec().iter().zip(b.to_f64_vec()).map(|(x, y)| x - y).collect();
    DenseMatrix::from_vec_f64(a.rows(), a.cols(), d).unwrap()
}

pub fn dist(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    sub(a, b).frobenius_norm()
}

pub fn rel_dist(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    dist(a, b) / b.frobenius_norm()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.matmul_f64(b).unwrap()
}

/// `||G1 - G2||_F / ||G2||_F` for two Gram matrices.
pub fn gram_gap(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    rel_dist(a, b)
}

/// `X X^T` in double precision.
pub fn gram_of(x: &DenseMatrix) -> DenseMatrix {
    let xd = x.to_precision(Precision::Double).unwrap();
    mul(&xd, &xd.transpose())
}

/// Orthonormal basis matrix with `r` leading columns of the identity.
pub fn canonical(m: usize, r: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m, r, Precision::Double, |i, j| if i == j { 1.0 } else { 0.0 }).unwrap()
}
