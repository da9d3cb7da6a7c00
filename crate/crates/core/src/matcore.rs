//! Dense matrix container, precision control and the domain types shared by
//! every solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Real};

/// Working precision of a matrix and of the solver run on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    Single,
    #[serde(rename = "f64")]
    Double,
}

impl Precision {
    /// Unit roundoff style machine epsilon (`1 + eps != 1`).
    pub fn epsilon(self) -> f64 {
        match self {
            Precision::Single => f32::EPSILON as f64,
            Precision::Double => f64::EPSILON,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision `{other}` (expected f32 or f64)"
            ))),
        }
    }
}

/// Tolerances used for validation and cross-method agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed `||A^T A - I||_F` for single-precision orthonormal inputs.
    pub orth_single: f64,
    /// Allowed `||A^T A - I||_F` for double-precision orthonormal inputs.
    pub orth_double: f64,
    pub objective_rel_single: f64,
    pub objective_rel_double: f64,
    /// A singular gap at or below `gap_rel * sigma_1` counts as a tie.
    pub gap_rel_single: f64,
    pub gap_rel_double: f64,
    /// Minimum `sigma_min / sigma_max` of X accepted by the closed-form reference.
    pub reference_condition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orth_single: 1e-6,
            orth_double: 1e-10,
            objective_rel_single: 1e-3,
            objective_rel_double: 1e-8,
            gap_rel_single: 1e-4,
            gap_rel_double: 1e-8,
            reference_condition: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn orth(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Single => self.orth_single,
            Precision::Double => self.orth_double,
        }
    }

    pub fn objective_rel(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Single => self.objective_rel_single,
            Precision::Double => self.objective_rel_double,
        }
    }

    pub fn gap_rel(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Single => self.gap_rel_single,
            Precision::Double => self.gap_rel_double,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Single(Vec<f32>),
    Double(Vec<f64>),
}

/// Row-major dense real matrix with a runtime precision tag.
///
/// Every entry is finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Storage,
}

fn check_shape(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if rows.checked_mul(cols) != Some(len) {
        return Err(Error::Dimension(format!(
            "data length {len} does not match {rows}x{cols}"
        )));
    }
    Ok(())
}

fn check_finite<T: Copy + Into<f64>>(cols: usize, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !(*v).into().is_finite()) {
        None => Ok(()),
        Some(pos) => Err(Error::NonFinite {
            row: pos / cols,
            col: pos % cols,
            value: data[pos].into(),
        }),
    }
}

impl DenseMatrix {
    pub fn from_vec_f64(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, data.len())?;
        check_finite(cols, &data)?;
        Ok(Self {
            rows,
            cols,
            data: Storage::Double(data),
        })
    }

    pub fn from_vec_f32(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(rows, cols, data.len())?;
        check_finite(cols, &data)?;
        Ok(Self {
            rows,
            cols,
            data: Storage::Single(data),
        })
    }

    /// Builds a double-precision matrix from row slices.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != cols) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].as_ref().len()
            )));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_vec_f64(rows.len(), cols, data)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        precision: Precision,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.saturating_mul(cols));
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        match precision {
            Precision::Double => Self::from_vec_f64(rows, cols, data),
            Precision::Single => {
                Self::from_vec_f32(rows, cols, data.into_iter().map(|v| v as f32).collect())
            }
        }
    }

    pub fn zeros(rows: usize, cols: usize, precision: Precision) -> Result<Self> {
        check_shape(rows, cols, rows.saturating_mul(cols))?;
        let data = match precision {
            Precision::Double => Storage::Double(vec![0.0; rows * cols]),
            Precision::Single => Storage::Single(vec![0.0; rows * cols]),
        };
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize, precision: Precision) -> Result<Self> {
        Self::from_fn(n, n, precision, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn precision(&self) -> Precision {
        match self.data {
            Storage::Single(_) => Precision::Single,
            Storage::Double(_) => Precision::Double,
        }
    }

    /// Entry `(i, j)` widened to `f64`. Panics when out of bounds.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        match &self.data {
            Storage::Single(d) => d[i * self.cols + j] as f64,
            Storage::Double(d) => d[i * self.cols + j],
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            Storage::Double(d) => Some(d),
            Storage::Single(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Storage::Single(d) => Some(d),
            Storage::Double(_) => None,
        }
    }

    /// All entries widened to `f64`, row-major.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Storage::Double(d) => d.clone(),
            Storage::Single(d) => d.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Converts to the requested precision. Narrowing rounds to nearest and
    /// fails if an entry overflows `f32`.
    pub fn to_precision(&self, precision: Precision) -> Result<Self> {
        match (&self.data, precision) {
            (Storage::Single(_), Precision::Single) | (Storage::Double(_), Precision::Double) => {
                Ok(self.clone())
            }
            (Storage::Single(d), Precision::Double) => {
                Self::from_vec_f64(self.rows, self.cols, d.iter().map(|&v| v as f64).collect())
            }
            (Storage::Double(d), Precision::Single) => {
                Self::from_vec_f32(self.rows, self.cols, d.iter().map(|&v| v as f32).collect())
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows, self.cols);
        let data = match &self.data {
            Storage::Double(d) => Storage::Double((0..r * c).map(|t| d[(t % r) * c + t / r]).collect()),
            Storage::Single(d) => Storage::Single((0..r * c).map(|t| d[(t % r) * c + t / r]).collect()),
        };
        Self {
            rows: c,
            cols: r,
            data,
        }
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.rows {
            return Err(Error::Dimension(format!(
                "row block {start}..{} outside 0..{}",
                start + len,
                self.rows
            )));
        }
        let range = start * self.cols..(start + len) * self.cols;
        let data = match &self.data {
            Storage::Double(d) => Storage::Double(d[range].to_vec()),
            Storage::Single(d) => Storage::Single(d[range].to_vec()),
        };
        Ok(Self {
            rows: len,
            cols: self.cols,
            data,
        })
    }

    /// Stacks blocks vertically; all blocks must share width and precision.
    pub fn vstack(blocks: &[DenseMatrix]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero blocks".into()))?;
        let cols = first.cols;
        let precision = first.precision();
        for (i, b) in blocks.iter().enumerate() {
            if b.cols != cols || b.precision() != precision {
                return Err(Error::Dimension(format!(
                    "block {i} is {}x{} ({}), expected width {cols} ({precision})",
                    b.rows,
                    b.cols,
                    b.precision()
                )));
            }
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let data = match precision {
            Precision::Double => Storage::Double(
                blocks.iter().flat_map(|b| b.as_f64().unwrap().iter().copied()).collect(),
            ),
            Precision::Single => Storage::Single(
                blocks.iter().flat_map(|b| b.as_f32().unwrap().iter().copied()).collect(),
            ),
        };
        Ok(Self { rows, cols, data })
    }

    /// Frobenius norm, accumulated in double precision.
    pub fn frobenius_norm(&self) -> f64 {
        match self.precision() {
            Precision::Double => linalg::frobenius_f64(linalg::to_mat::<f64>(self).as_ref()),
            Precision::Single => linalg::frobenius_f64(linalg::to_mat::<f32>(self).as_ref()),
        }
    }

    /// Product `self * other` computed in double precision.
    pub fn matmul_f64(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let p = linalg::matmul(
            linalg::to_mat::<f64>(self).as_ref(),
            linalg::to_mat::<f64>(other).as_ref(),
        );
        linalg::from_mat(p.as_ref())
    }

    /// Bitwise equality of shape, precision and every stored scalar.
    pub fn bitwise_eq(&self, other: &DenseMatrix) -> bool {
        if self.shape() != other.shape() {
            return false;
        }
        match (&self.data, &other.data) {
            (Storage::Double(a), Storage::Double(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Storage::Single(a), Storage::Single(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// A weighted low-rank approximation task: minimise `||(W - W')X||_F` over
/// `rank(W') <= rank`, optionally regularised by `mu ||W' - W||_F^2` or
/// reweighted by `(X X^T)^alpha`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    w: DenseMatrix,
    x: DenseMatrix,
    rank: usize,
    mu: f64,
    alpha: u32,
}

impl ProblemInstance {
    /// `w` is `m x n`, `x` is `n x k`. Both must share a precision, which is
    /// the precision the solvers run in.
    pub fn new(w: DenseMatrix, x: DenseMatrix, rank: usize) -> Result<Self> {
        if x.rows() != w.cols() {
            return Err(Error::Dimension(format!(
                "W is {}x{} but X is {}x{}; X must have {} rows",
                w.rows(),
                w.cols(),
                x.rows(),
                x.cols(),
                w.cols()
            )));
        }
        if w.precision() != x.precision() {
            return Err(Error::InvalidArgument(format!(
                "W is {} but X is {}; convert both to one precision",
                w.precision(),
                x.precision()
            )));
        }
        let max_rank = w.rows().min(w.cols());
        if rank == 0 || rank > max_rank {
            return Err(Error::InvalidArgument(format!(
                "rank {rank} outside 1..={max_rank} for a {}x{} weight matrix",
                w.rows(),
                w.cols()
            )));
        }
        Ok(Self {
            w,
            x,
            rank,
            mu: 0.0,
            alpha: 1,
        })
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "regularization weight mu must be finite and >= 0, got {mu}"
            )));
        }
        self.mu = mu;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: u32) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn w(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn precision(&self) -> Precision {
        self.w.precision()
    }

    /// `(m, n, k)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w.rows(), self.w.cols(), self.x.cols())
    }
}

/// Rank-r factorisation `W' = A B` with `A: m x r`, `B: r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    a: DenseMatrix,
    b: DenseMatrix,
}

impl FactorPair {
    pub fn new(a: DenseMatrix, b: DenseMatrix) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::Dimension(format!(
                "A is {}x{} but B is {}x{}; inner dimensions differ",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if a.precision() != b.precision() {
            return Err(Error::InvalidArgument("A and B precisions differ".into()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn precision(&self) -> Precision {
        self.a.precision()
    }

    /// `A B` evaluated in double precision.
    pub fn product(&self) -> DenseMatrix {
        self.a
            .matmul_f64(&self.b)
            .expect("factor shapes are validated at construction")
    }

    /// `||A^T A - I||_F`, in double precision.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.a)
    }

    pub fn into_parts(self) -> (DenseMatrix, DenseMatrix) {
        (self.a, self.b)
    }
}

pub(crate) fn orthonormality_defect(a: &DenseMatrix) -> f64 {
    let a = linalg::to_mat::<f64>(a);
    let mut g = linalg::matmul(a.transpose(), a.as_ref());
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm_l2()
}

/// Descending singular values of a matrix and quantities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    sigmas: Vec<f64>,
}

impl SpectralSummary {
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument(
                "singular values must be finite and non-negative".into(),
            ));
        }
        if sigmas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "singular values must be non-increasing".into(),
            ));
        }
        Ok(Self { sigmas })
    }

    /// Singular values of `m`, computed in double precision.
    pub fn of(m: &DenseMatrix) -> Result<Self> {
        let mat = linalg::to_mat::<f64>(m);
        let mut sigmas = linalg::singular_values(mat.as_ref())?;
        // Guard against backend ties reported in the wrong order.
        sigmas.sort_by(|a, b| b.total_cmp(a));
        Self::from_sigmas(sigmas)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// `sigma_i` with 1-based index; zero past the end of the spectrum.
    pub fn sigma(&self, i: usize) -> f64 {
        assert!(i >= 1, "singular values are 1-indexed");
        self.sigmas.get(i - 1).copied().unwrap_or(0.0)
    }

    /// `sigma_r - sigma_{r+1}`.
    pub fn gap_at(&self, r: usize) -> f64 {
        self.sigma(r) - self.sigma(r + 1)
    }

    /// `sqrt(sum_{i > r} sigma_i^2)`.
    pub fn tail_energy(&self, r: usize) -> f64 {
        // Smallest first keeps the sum accurate.
        self.sigmas
            .iter()
            .skip(r)
            .rev()
            .fold(0.0, |acc, s| acc + s * s)
            .sqrt()
    }

    /// `sum_i sigma_i^2`.
    pub fn total_energy(&self) -> f64 {
        self.sigmas.iter().rev().fold(0.0, |acc, s| acc + s * s)
    }
}

fn check_objective_dims(w: &DenseMatrix, factors: &FactorPair, x: &DenseMatrix) -> Result<()> {
    if factors.a().rows() != w.rows() || factors.b().cols() != w.cols() {
        return Err(Error::Dimension(format!(
            "factors produce {}x{} but W is {}x{}",
            factors.a().rows(),
            factors.b().cols(),
            w.rows(),
            w.cols()
        )));
    }
    if x.rows() != w.cols() {
        return Err(Error::Dimension(format!(
            "W has {} columns but X has {} rows",
            w.cols(),
            x.rows()
        )));
    }
    Ok(())
}

fn residual_f64(w: &DenseMatrix, factors: &FactorPair) -> faer::Mat<f64> {
    let mut d = linalg::to_mat::<f64>(w);
    let ab = linalg::matmul(
        linalg::to_mat::<f64>(factors.a()).as_ref(),
        linalg::to_mat::<f64>(factors.b()).as_ref(),
    );
    d -= &ab;
    d
}

/// `||(W - A B) X||_F`, always evaluated in double precision.
pub fn objective_value(w: &DenseMatrix, factors: &FactorPair, x: &DenseMatrix) -> Result<f64> {
    check_objective_dims(w, factors, x)?;
    let d = residual_f64(w, factors);
    let dx = linalg::matmul(d.as_ref(), linalg::to_mat::<f64>(x).as_ref());
    Ok(linalg::frobenius_f64(dx.as_ref()))
}

/// `||(W - A B) X||_F^2 + mu ||W - A B||_F^2` (squared form).
pub fn regularized_objective(
    w: &DenseMatrix,
    factors: &FactorPair,
    x: &DenseMatrix,
    mu: f64,
) -> Result<f64> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "regularization weight mu must be finite and >= 0, got {mu}"
        )));
    }
    check_objective_dims(w, factors, x)?;
    let d = residual_f64(w, factors);
    let dx = linalg::matmul(d.as_ref(), linalg::to_mat::<f64>(x).as_ref());
    let fit = linalg::frobenius_f64(dx.as_ref());
    let reg = linalg::frobenius_f64(d.as_ref());
    Ok(fit * fit + mu * reg * reg)
}

/// Projector distance `||A1 A1^T - A2 A2^T||_F` using default tolerances.
pub fn subspace_distance(a1: &DenseMatrix, a2: &DenseMatrix) -> Result<f64> {
    subspace_distance_with(a1, a2, &Tolerances::default())
}

/// Projector distance between the column spaces of two matrices with
/// orthonormal columns.
pub fn subspace_distance_with(a1: &DenseMatrix, a2: &DenseMatrix, tol: &Tolerances) -> Result<f64> {
    if a1.shape() != a2.shape() {
        return Err(Error::Dimension(format!(
            "bases are {}x{} and {}x{}",
            a1.rows(),
            a1.cols(),
            a2.rows(),
            a2.cols()
        )));
    }
    let precision = if a1.precision() == Precision::Single || a2.precision() == Precision::Single {
        Precision::Single
    } else {
        Precision::Double
    };
    let tolerance = tol.orth(precision);
    for a in [a1, a2] {
        let deviation = orthonormality_defect(a);
        if deviation > tolerance {
            return Err(Error::NotOrthonormal {
                deviation,
                tolerance,
            });
        }
    }
    // ||P1 - P2||_F^2 = ||(I - P2) A1||_F^2 + ||(I - P1) A2||_F^2 for equal
    // ranks; the explicit residuals avoid cancellation near zero.
    let u1 = linalg::to_mat::<f64>(a1);
    let u2 = linalg::to_mat::<f64>(a2);
    let residual = |p: &faer::Mat<f64>, q: &faer::Mat<f64>| {
        let coeffs = linalg::matmul(q.transpose(), p.as_ref());
        let mut res = p.clone();
        res -= linalg::matmul(q.as_ref(), coeffs.as_ref());
        linalg::frobenius_f64(res.as_ref())
    };
    let e1 = residual(&u1, &u2);
    let e2 = residual(&u2, &u1);
    Ok((e1 * e1 + e2 * e2).sqrt())
}

/// Wraps backend factors, rejecting non-finite output.
pub(crate) fn factors_from_mats<T: Real>(
    a: faer::MatRef<'_, T>,
    b: faer::MatRef<'_, T>,
) -> Result<FactorPair> {
    if !linalg::all_finite(a) || !linalg::all_finite(b) {
        return Err(Error::Numerical(
            "solver produced non-finite factors".into(),
        ));
    }
    FactorPair::new(linalg::from_mat(a)?, linalg::from_mat(b)?)
}
