//! Thin dense-kernel layer over `faer`, generic over the working precision.
//!
//! Everything the solvers and TSQR need from a backend lives here: R-only
//! Householder QR, thin/full SVD, symmetric eigendecomposition, Cholesky and
//! conversions to and from [`DenseMatrix`].

use faer::linalg::qr::no_pivoting::factor as qr_factor;
use faer::traits::num_traits::Float;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};
use crate::matcore::{DenseMatrix, Precision};

/// Scalar types the solvers run in.
pub trait Real:
    faer::traits::RealField
    + Float
    + Copy
    + Send
    + Sync
    + std::fmt::Debug
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(value: f64) -> Self;
    fn to_f64(self) -> f64;
    fn slice(m: &DenseMatrix) -> Option<&[Self]>;
    fn wrap(rows: usize, cols: usize, data: Vec<Self>) -> Result<DenseMatrix>;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(value: f64) -> Self {
        value as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn slice(m: &DenseMatrix) -> Option<&[Self]> {
        m.as_f32()
    }
    fn wrap(rows: usize, cols: usize, data: Vec<Self>) -> Result<DenseMatrix> {
        DenseMatrix::from_vec_f32(rows, cols, data)
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(value: f64) -> Self {
        value
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn slice(m: &DenseMatrix) -> Option<&[Self]> {
        m.as_f64()
    }
    fn wrap(rows: usize, cols: usize, data: Vec<Self>) -> Result<DenseMatrix> {
        DenseMatrix::from_vec_f64(rows, cols, data)
    }
}

/// Copies `m` into a column-major faer matrix, converting precision if needed.
pub(crate) fn to_mat<T: Real>(m: &DenseMatrix) -> Mat<T> {
    let cols = m.cols();
    match T::slice(m) {
        Some(data) => Mat::from_fn(m.rows(), cols, |i, j| data[i * cols + j]),
        None => Mat::from_fn(m.rows(), cols, |i, j| T::from_f64(m.get(i, j))),
    }
}

/// Transposed copy: `to_mat(m)^T` without an intermediate.
pub(crate) fn to_mat_transposed<T: Real>(m: &DenseMatrix) -> Mat<T> {
    let cols = m.cols();
    match T::slice(m) {
        Some(data) => Mat::from_fn(cols, m.rows(), |i, j| data[j * cols + i]),
        None => Mat::from_fn(cols, m.rows(), |i, j| T::from_f64(m.get(j, i))),
    }
}

/// Copies `m` into `dst`, which must have the same shape.
pub(crate) fn copy_into<T: Real>(mut dst: MatMut<'_, T>, m: &DenseMatrix) {
    let cols = m.cols();
    match T::slice(m) {
        Some(data) => {
            for (i, row) in data.chunks_exact(cols).enumerate() {
                for (j, v) in row.iter().enumerate() {
                    dst[(i, j)] = *v;
                }
            }
        }
        None => {
            for i in 0..m.rows() {
                for j in 0..cols {
                    dst[(i, j)] = T::from_f64(m.get(i, j));
                }
            }
        }
    }
}

pub(crate) fn from_mat<T: Real>(m: MatRef<'_, T>) -> Result<DenseMatrix> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(m[(i, j)]);
        }
    }
    T::wrap(rows, cols, data)
}

pub(crate) fn matmul<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, a, b, T::one(), Par::Seq);
    out
}

pub(crate) fn all_finite<T: Real>(m: MatRef<'_, T>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

pub(crate) fn is_zero<T: Real>(m: MatRef<'_, T>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)] == T::zero()))
}

/// Frobenius norm accumulated in double precision.
pub(crate) fn frobenius_f64<T: Real>(m: MatRef<'_, T>) -> f64 {
    let mut scale = 0.0f64;
    let mut ssq = 1.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)].to_f64().abs();
            if v > 0.0 {
                if scale < v {
                    ssq = 1.0 + ssq * (scale / v) * (scale / v);
                    scale = v;
                } else {
                    ssq += (v / scale) * (v / scale);
                }
            }
        }
    }
    scale * ssq.sqrt()
}

/// Singular triplets; `s` is non-increasing.
pub(crate) struct SvdParts<T: Real> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

/// Thin SVD, or an SVD with a full left basis when `full_u` is set (needed
/// when the requested rank exceeds `min(rows, cols)`).
pub(crate) fn svd<T: Real>(m: MatRef<'_, T>, full_u: bool) -> Result<SvdParts<T>> {
    let decomposition = if full_u { m.svd() } else { m.thin_svd() }
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s = decomposition.S().column_vector().iter().copied().collect();
    Ok(SvdParts {
        u: decomposition.U().to_owned(),
        s,
        v: decomposition.V().to_owned(),
    })
}

pub(crate) fn singular_values<T: Real>(m: MatRef<'_, T>) -> Result<Vec<T>> {
    m.singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))
}

/// Eigenpairs of a symmetric matrix, eigenvalues in non-decreasing order.
pub(crate) fn sym_eigen<T: Real>(g: MatRef<'_, T>) -> Result<(Vec<T>, Mat<T>)> {
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition did not converge: {e:?}")))?;
    let values = evd.S().column_vector().iter().copied().collect();
    Ok((values, evd.U().to_owned()))
}

/// Lower Cholesky factor `L` with `L L^T = g`.
pub(crate) fn cholesky_lower<T: Real>(g: MatRef<'_, T>) -> Result<Mat<T>> {
    match g.llt(Side::Lower) {
        Ok(llt) => Ok(llt.L().to_owned()),
        Err(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => {
            Err(Error::CholeskyBreakdown { pivot: index })
        }
    }
}

/// Explicit inverse of a lower-triangular matrix.
pub(crate) fn lower_triangular_inverse<T: Real>(l: MatRef<'_, T>) -> Mat<T> {
    let n = l.nrows();
    let mut inv = Mat::<T>::identity(n, n);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, inv.as_mut(), Par::Seq);
    inv
}

/// Flips rows of an upper-triangular `r` so the diagonal is non-negative.
pub(crate) fn normalize_signs<T: Real>(mut r: MatMut<'_, T>) {
    let n = r.nrows().min(r.ncols());
    for i in 0..n {
        if r[(i, i)] < T::zero() {
            for j in i..r.ncols() {
                let v = r[(i, j)];
                r[(i, j)] = -v;
            }
        }
    }
}

/// Scratch sizes (in scalars) that [`qr_r_in_place`] allocates for a
/// `rows x cols` input.
pub(crate) fn qr_workspace_scalars<T: Real>(rows: usize, cols: usize) -> usize {
    let block = qr_factor::recommended_block_size::<T>(rows, cols);
    // Householder coefficient block plus the temporary of the same shape.
    2 * block * rows.min(cols)
}

/// Householder QR of `buf` in place; on return the upper trapezoid of `buf`
/// holds R (below-diagonal entries are Householder vectors). Q is never formed.
pub(crate) fn qr_r_in_place<T: Real>(buf: MatMut<'_, T>, par: Par) {
    let (rows, cols) = (buf.nrows(), buf.ncols());
    let size = rows.min(cols);
    if size == 0 {
        return;
    }
    let block = qr_factor::recommended_block_size::<T>(rows, cols);
    let mut coeff = Mat::<T>::zeros(block, size);
    let mut mem = faer::dyn_stack::MemBuffer::new(qr_factor::qr_in_place_scratch::<T>(
        rows,
        cols,
        block,
        par,
        Default::default(),
    ));
    qr_factor::qr_in_place(
        buf,
        coeff.as_mut(),
        par,
        faer::dyn_stack::MemStack::new(&mut mem),
        Default::default(),
    );
}

/// Extracts the `cols x cols` R factor from a buffer processed by
/// [`qr_r_in_place`], padding with zero rows when the buffer had fewer rows
/// than columns, and forces a non-negative diagonal.
pub(crate) fn extract_r<T: Real>(buf: MatRef<'_, T>) -> Mat<T> {
    let n = buf.ncols();
    let filled = buf.nrows().min(n);
    let mut r = Mat::<T>::zeros(n, n);
    for j in 0..n {
        for i in 0..filled.min(j + 1) {
            r[(i, j)] = buf[(i, j)];
        }
    }
    normalize_signs(r.as_mut());
    r
}

/// R factor of a sample-major block (`k x n`, rows are samples) so that
/// `R^T R = block^T block`.
pub(crate) fn r_factor<T: Real>(samples: MatRef<'_, T>) -> Mat<T> {
    let mut buf = samples.to_owned();
    qr_r_in_place(buf.as_mut(), faer::get_global_parallelism());
    extract_r(buf.as_ref())
}

/// R factor of `[top; bottom]` without materialising anything beyond the
/// stacked buffer.
pub(crate) fn stacked_r_factor<T: Real>(top: MatRef<'_, T>, bottom: MatRef<'_, T>, par: Par) -> Mat<T> {
    let n = top.ncols();
    let mut buf = Mat::<T>::zeros(top.nrows() + bottom.nrows(), n);
    buf.as_mut().submatrix_mut(0, 0, top.nrows(), n).copy_from(top);
    buf.as_mut()
        .submatrix_mut(top.nrows(), 0, bottom.nrows(), n)
        .copy_from(bottom);
    qr_r_in_place(buf.as_mut(), par);
    extract_r(buf.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_factor_reproduces_gram() {
        let x = Mat::<f64>::from_fn(7, 3, |i, j| ((i * 3 + j) as f64).sin() + 0.1 * j as f64);
        let r = r_factor(x.as_ref());
        let lhs = matmul(r.transpose(), r.as_ref());
        let rhs = matmul(x.transpose(), x.as_ref());
        let diff = &lhs - &rhs;
        assert!(diff.norm_l2() < 1e-13 * rhs.norm_l2());
        for i in 0..3 {
            assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn short_block_pads_with_zero_rows() {
        let x = Mat::<f64>::from_fn(2, 4, |i, j| (i + 2 * j) as f64 + 1.0);
        let r = r_factor(x.as_ref());
        assert_eq!((r.nrows(), r.ncols()), (4, 4));
        for j in 0..4 {
            assert_eq!(r[(2, j)], 0.0);
            assert_eq!(r[(3, j)], 0.0);
        }
        let lhs = matmul(r.transpose(), r.as_ref());
        let rhs = matmul(x.transpose(), x.as_ref());
        assert!((&lhs - &rhs).norm_l2() < 1e-12 * rhs.norm_l2());
    }

    #[test]
    fn cholesky_reports_pivot() {
        let g = Mat::<f64>::from_fn(3, 3, |i, j| if i == j || i + j == 1 { 1.0 } else { 0.0 });
        match cholesky_lower(g.as_ref()) {
            Err(Error::CholeskyBreakdown { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected breakdown, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn frobenius_is_overflow_safe() {
        let m = Mat::<f32>::from_fn(2, 2, |_, _| 3.0e30);
        assert!((frobenius_f64(m.as_ref()) - 6.0e30).abs() < 1e24);
    }
}
