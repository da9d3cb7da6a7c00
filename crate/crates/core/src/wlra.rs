//! Solvers for `min_{rank(W') <= r} ||(W - W') X||_F`.
//!
//! The inversion-free family never forms `X X^T` or inverts anything: the left
//! singular vectors of `W X` (or of `W R^T` with `R^T R = X X^T`) give the
//! optimal projector `U_r U_r^T`, and `W' = U_r (U_r^T W)`. The closed-form
//! reference and the two Gram-based baselines are kept for comparison; the
//! baselines deliberately reproduce the explicit Gram formation and inversion.

use std::fmt;
use std::time::Instant;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Real};
use crate::matcore::{factors_from_mats, DenseMatrix, FactorPair, Precision, ProblemInstance, Tolerances};
use crate::tsqr::{augment_with_regularizer, RFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMethod {
    /// Algorithm with R-factor preprocessing of the calibration data.
    CoalaQr,
    /// SVD of `W X` directly, no preprocessing.
    CoalaDirect,
    /// Closed form `U Sigma_r V^T (X X^T)^{-1/2}`, double precision only.
    Reference,
    /// Cholesky of the Gram matrix followed by an explicit triangular inverse.
    GramCholesky,
    /// SVD-based square root of the Gram matrix and its inverse.
    GramSvd,
    /// Weighting by `(X X^T)^{alpha/2}`.
    Alpha(u32),
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverMethod::CoalaQr => f.write_str("coala-qr"),
            SolverMethod::CoalaDirect => f.write_str("coala-direct"),
            SolverMethod::Reference => f.write_str("reference"),
            SolverMethod::GramCholesky => f.write_str("gram-cholesky"),
            SolverMethod::GramSvd => f.write_str("gram-svd"),
            SolverMethod::Alpha(a) => write!(f, "alpha-{a}"),
        }
    }
}

impl Serialize for SolverMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "coala" | "coala-qr" => SolverMethod::CoalaQr,
            "coala-direct" => SolverMethod::CoalaDirect,
            "reference" => SolverMethod::Reference,
            "gram-cholesky" => SolverMethod::GramCholesky,
            "gram-svd" => SolverMethod::GramSvd,
            other => match other.strip_prefix("alpha-").map(str::parse::<u32>) {
                Some(Ok(a)) => SolverMethod::Alpha(a),
                _ => {
                    return Err(Error::InvalidArgument(format!("unknown solver method `{other}`")))
                }
            },
        })
    }
}

/// Which reduction of the calibration data a solve used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathTaken {
    /// Triangular factor of `X^T`.
    Qr,
    /// `W X` used as is.
    Direct,
    /// Explicit Gram matrix `X X^T`.
    Gram,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveStatus {
    pub method: SolverMethod,
    pub path_taken: PathTaken,
    pub precision: Precision,
    /// `W X` was identically zero; the canonical fallback was returned.
    pub degenerate: bool,
    /// `sigma_r` and `sigma_{r+1}` of the weighted matrix are numerically tied,
    /// so the optimal subspace is not unique.
    pub gap_degenerate: bool,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub factors: FactorPair,
    pub status: SolveStatus,
}

impl Solution {
    /// `W' = A B` in double precision.
    pub fn approximation(&self) -> DenseMatrix {
        self.factors.product()
    }
}

struct Projected<T: Real> {
    a: Mat<T>,
    b: Mat<T>,
    degenerate: bool,
    gap_degenerate: bool,
}

fn is_gap_degenerate<T: Real>(s: &[T], rank: usize, gap_rel: f64) -> bool {
    let at = |i: usize| s.get(i).map_or(0.0, |v| Real::to_f64(*v));
    let top = at(0);
    top > 0.0 && at(rank - 1) - at(rank) <= gap_rel * top
}

fn canonical_fallback<T: Real>(m: usize, n: usize, rank: usize) -> Projected<T> {
    Projected {
        a: Mat::from_fn(m, rank, |i, j| if i == j { T::one() } else { T::zero() }),
        b: Mat::zeros(rank, n),
        degenerate: true,
        gap_degenerate: false,
    }
}

/// `A = U_r` of `weighted`, `B = A^T W`.
fn project<T: Real>(
    w: MatRef<'_, T>,
    weighted: MatRef<'_, T>,
    rank: usize,
    gap_rel: f64,
) -> Result<Projected<T>> {
    if linalg::is_zero(weighted) {
        return Ok(canonical_fallback(w.nrows(), w.ncols(), rank));
    }
    let full_u = rank > weighted.nrows().min(weighted.ncols());
    let parts = linalg::svd(weighted, full_u)?;
    let a = parts.u.get(.., ..rank).to_owned();
    let b = linalg::matmul(a.transpose(), w);
    Ok(Projected {
        a,
        b,
        degenerate: false,
        gap_degenerate: is_gap_degenerate(&parts.s, rank, gap_rel),
    })
}

fn finish<T: Real>(
    p: Projected<T>,
    method: SolverMethod,
    path_taken: PathTaken,
    started: Instant,
) -> Result<Solution> {
    let factors = factors_from_mats(p.a.as_ref(), p.b.as_ref())?;
    Ok(Solution {
        factors,
        status: SolveStatus {
            method,
            path_taken,
            precision: T::PRECISION,
            degenerate: p.degenerate,
            gap_degenerate: p.gap_degenerate,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

macro_rules! dispatch {
    ($precision:expr, $f:ident ( $($arg:expr),* )) => {
        match $precision {
            Precision::Single => $f::<f32>($($arg),*),
            Precision::Double => $f::<f64>($($arg),*),
        }
    };
}

/// `W R^T` where `R` comes from a triangular factor; the weighting used by
/// every QR-path solver.
fn weight_by_r<T: Real>(w: MatRef<'_, T>, r: MatRef<'_, T>) -> Mat<T> {
    linalg::matmul(w, r.transpose())
}

fn solve_projection_imp<T: Real>(
    w: &DenseMatrix,
    x: &DenseMatrix,
    rank: usize,
    tol: &Tolerances,
) -> Result<Solution> {
    let started = Instant::now();
    let w = linalg::to_mat::<T>(w);
    let wx = linalg::matmul(w.as_ref(), linalg::to_mat::<T>(x).as_ref());
    let p = project(w.as_ref(), wx.as_ref(), rank, tol.gap_rel(T::PRECISION))?;
    finish(p, SolverMethod::CoalaDirect, PathTaken::Direct, started)
}

/// Optimal factors from the left singular vectors of `W X`, with no
/// assumption on the shape or rank of `X`.
pub fn solve_projection(w: &DenseMatrix, x: &DenseMatrix, rank: usize) -> Result<Solution> {
    let instance = ProblemInstance::new(w.clone(), x.clone(), rank)?;
    dispatch!(instance.precision(), solve_projection_imp(instance.w(), instance.x(), rank, &Tolerances::default()))
}

/// Upper-triangular `R` (`n x n`) with `R^T R = X X^T` from a QR factorisation
/// of `X^T`. Only R is materialised. Requires `k >= n`.
pub fn qr_reduce(x: &DenseMatrix) -> Result<RFactor> {
    let (n, k) = x.shape();
    if k < n {
        return Err(Error::InvalidArgument(format!(
            "X is {n}x{k} with fewer samples than features; augment it with a regularizer \
             or use the direct projection solver"
        )));
    }
    RFactor::from_samples(&x.transpose())
}

fn r_factor_of<T: Real>(x: &DenseMatrix) -> Mat<T> {
    linalg::r_factor(linalg::to_mat_transposed::<T>(x).as_ref())
}

fn solve_coala_imp<T: Real>(instance: &ProblemInstance, tol: &Tolerances) -> Result<Solution> {
    let started = Instant::now();
    let (_, n, k) = instance.dims();
    if k < n {
        let mut s = solve_projection_imp::<T>(instance.w(), instance.x(), instance.rank(), tol)?;
        s.status.method = SolverMethod::CoalaQr;
        return Ok(s);
    }
    let w = linalg::to_mat::<T>(instance.w());
    let r = r_factor_of::<T>(instance.x());
    let weighted = weight_by_r(w.as_ref(), r.as_ref());
    let p = project(w.as_ref(), weighted.as_ref(), instance.rank(), tol.gap_rel(T::PRECISION))?;
    finish(p, SolverMethod::CoalaQr, PathTaken::Qr, started)
}

/// Inversion-free solver: QR of `X^T` for its R factor, SVD of `W R^T`,
/// `A = U_r`, `B = U_r^T W`. Falls back to the direct SVD of `W X` when
/// `k < n`; `status.path_taken` records which ran. `mu` is ignored here.
pub fn solve_coala(instance: &ProblemInstance) -> Result<Solution> {
    solve_coala_with(instance, &Tolerances::default())
}

pub fn solve_coala_with(instance: &ProblemInstance, tol: &Tolerances) -> Result<Solution> {
    dispatch!(instance.precision(), solve_coala_imp(instance, tol))
}

fn solve_from_r_imp<T: Real>(
    w: &DenseMatrix,
    r: &RFactor,
    rank: usize,
    tol: &Tolerances,
) -> Result<Solution> {
    let started = Instant::now();
    let w = linalg::to_mat::<T>(w);
    let r = linalg::to_mat::<T>(r.matrix());
    let weighted = weight_by_r(w.as_ref(), r.as_ref());
    let p = project(w.as_ref(), weighted.as_ref(), rank, tol.gap_rel(T::PRECISION))?;
    finish(p, SolverMethod::CoalaQr, PathTaken::Qr, started)
}

/// Inversion-free solver fed by a precomputed R factor (for example from
/// out-of-core TSQR). Runs in the precision of `w`.
pub fn solve_coala_from_r(w: &DenseMatrix, r: &RFactor, rank: usize) -> Result<Solution> {
    let n = w.cols();
    if r.n() != n {
        return Err(Error::Dimension(format!(
            "W has {n} columns but R is {0}x{0}",
            r.n()
        )));
    }
    let max_rank = w.rows().min(n);
    if rank == 0 || rank > max_rank {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} outside 1..={max_rank}"
        )));
    }
    dispatch!(w.precision(), solve_from_r_imp(w, r, rank, &Tolerances::default()))
}

fn padded_r<T: Real>(x: &DenseMatrix) -> Result<RFactor> {
    let r = r_factor_of::<T>(x);
    RFactor::from_parts(linalg::from_mat(r.as_ref())?, x.cols() < x.rows())
}

/// Solves `min ||(W - W')X||_F^2 + mu ||W' - W||_F^2`. The R factor of `X^T`
/// is stacked over `sqrt(mu) I` and re-triangularised, so the augmented data
/// `[X, sqrt(mu) I]` is never formed. `mu = 0` is exactly [`solve_coala`].
pub fn solve_regularized(instance: &ProblemInstance) -> Result<Solution> {
    if instance.mu() == 0.0 {
        return solve_coala(instance);
    }
    let started = Instant::now();
    let r = dispatch!(instance.precision(), padded_r(instance.x()))?;
    let augmented = augment_with_regularizer(&r, instance.mu())?;
    let mut s = solve_coala_from_r(instance.w(), &augmented, instance.rank())?;
    s.status.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(s)
}

fn solve_alpha_imp<T: Real>(instance: &ProblemInstance, tol: &Tolerances) -> Result<Solution> {
    let started = Instant::now();
    let alpha = instance.alpha();
    let w = linalg::to_mat::<T>(instance.w());
    let gap_rel = tol.gap_rel(T::PRECISION);
    if alpha == 0 {
        let p = project(w.as_ref(), w.as_ref(), instance.rank(), gap_rel)?;
        return finish(p, SolverMethod::Alpha(0), PathTaken::Direct, started);
    }
    // (X X^T)^{alpha/2} = V diag(s^alpha) V^T with R = U diag(s) V^T; the
    // trailing V^T does not change the left singular vectors, so it is dropped.
    let r = r_factor_of::<T>(instance.x());
    let parts = linalg::svd(r.as_ref(), false)?;
    let exponent = alpha as i32;
    let scaled = Mat::from_fn(parts.v.nrows(), parts.v.ncols(), |i, j| {
        parts.v[(i, j)] * parts.s[j].powi(exponent)
    });
    let weighted = linalg::matmul(w.as_ref(), scaled.as_ref());
    let p = project(w.as_ref(), weighted.as_ref(), instance.rank(), gap_rel)?;
    finish(p, SolverMethod::Alpha(alpha), PathTaken::Qr, started)
}

/// Minimises `tr((W - W')(X X^T)^alpha (W - W')^T)` without forming `X X^T`.
/// `alpha = 0` is the truncated SVD of W, `alpha = 1` the unregularised
/// weighted problem, `alpha = 2` the objective `||(W - W') X X^T||_F`.
pub fn solve_alpha(instance: &ProblemInstance) -> Result<Solution> {
    dispatch!(instance.precision(), solve_alpha_imp(instance, &Tolerances::default()))
}

/// Closed form `W' = U Sigma_r V^T S^{-1}` with `S = (X X^T)^{1/2}` from the
/// eigendecomposition of the Gram matrix. Always double precision; refuses
/// calibration data whose `sigma_min / sigma_max` is at or below the
/// reference condition guard.
pub fn solve_reference(instance: &ProblemInstance) -> Result<Solution> {
    solve_reference_with(instance, &Tolerances::default())
}

pub fn solve_reference_with(instance: &ProblemInstance, tol: &Tolerances) -> Result<Solution> {
    let started = Instant::now();
    let (_, n, k) = instance.dims();
    let x = linalg::to_mat::<f64>(instance.x());
    let ratio = if k < n {
        0.0
    } else {
        let s = linalg::singular_values(x.as_ref())?;
        s[n - 1] / s[0]
    };
    if !(ratio > tol.reference_condition) {
        return Err(Error::RankDeficient { ratio });
    }
    let w = linalg::to_mat::<f64>(instance.w());
    let gram = linalg::matmul(x.as_ref(), x.transpose());
    let (lambda, v) = linalg::sym_eigen(gram.as_ref())?;
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Numerical(
            "Gram matrix has a non-positive eigenvalue".into(),
        ));
    }
    let scaled = |power: f64| {
        let vs = Mat::from_fn(n, n, |i, j| v[(i, j)] * lambda[j].powf(power));
        linalg::matmul(vs.as_ref(), v.transpose())
    };
    let sqrt_gram = scaled(0.5);
    let inv_sqrt_gram = scaled(-0.5);
    let weighted = linalg::matmul(w.as_ref(), sqrt_gram.as_ref());
    let parts = linalg::svd(weighted.as_ref(), false)?;
    let rank = instance.rank();
    let a = parts.u.get(.., ..rank).to_owned();
    let sv = Mat::from_fn(rank, n, |i, j| parts.s[i] * parts.v[(j, i)]);
    let b = linalg::matmul(sv.as_ref(), inv_sqrt_gram.as_ref());
    let p = Projected {
        a,
        b,
        degenerate: false,
        gap_degenerate: is_gap_degenerate(&parts.s, rank, tol.gap_rel(Precision::Double)),
    };
    finish(p, SolverMethod::Reference, PathTaken::Gram, started)
}

fn gram<T: Real>(x: &DenseMatrix) -> Mat<T> {
    let x = linalg::to_mat::<T>(x);
    linalg::matmul(x.as_ref(), x.transpose())
}

/// `Sigma_r V_r^T` from thin SVD parts.
fn sigma_vt<T: Real>(parts: &linalg::SvdParts<T>, rank: usize) -> Mat<T> {
    Mat::from_fn(rank, parts.v.nrows(), |i, j| parts.s[i] * parts.v[(j, i)])
}

fn solve_gram_cholesky_imp<T: Real>(instance: &ProblemInstance, tol: &Tolerances) -> Result<Solution> {
    let started = Instant::now();
    let rank = instance.rank();
    let w = linalg::to_mat::<T>(instance.w());
    let s = linalg::cholesky_lower(gram::<T>(instance.x()).as_ref())?;
    let ws = linalg::matmul(w.as_ref(), s.as_ref());
    let parts = linalg::svd(ws.as_ref(), rank > ws.nrows().min(ws.ncols()))?;
    let a = parts.u.get(.., ..rank).to_owned();
    let s_inv = linalg::lower_triangular_inverse(s.as_ref());
    let b = linalg::matmul(sigma_vt(&parts, rank).as_ref(), s_inv.as_ref());
    let p = Projected {
        a,
        b,
        degenerate: false,
        gap_degenerate: is_gap_degenerate(&parts.s, rank, tol.gap_rel(T::PRECISION)),
    };
    finish(p, SolverMethod::GramCholesky, PathTaken::Gram, started)
}

/// Gram baseline: `S = cholesky(X X^T)`, SVD of `W S`, `B = Sigma_r V_r^T S^{-1}`.
/// Fails with [`Error::CholeskyBreakdown`] when the computed Gram matrix is not
/// numerically positive definite.
pub fn solve_gram_cholesky(instance: &ProblemInstance) -> Result<Solution> {
    dispatch!(instance.precision(), solve_gram_cholesky_imp(instance, &Tolerances::default()))
}

fn solve_gram_svd_imp<T: Real>(instance: &ProblemInstance, tol: &Tolerances) -> Result<Solution> {
    let started = Instant::now();
    let rank = instance.rank();
    let w = linalg::to_mat::<T>(instance.w());
    let g = gram::<T>(instance.x());
    let gs = linalg::svd(g.as_ref(), false)?;
    let n = g.nrows();
    let us_sqrt = Mat::from_fn(n, n, |i, j| gs.u[(i, j)] * gs.s[j].sqrt());
    let m = linalg::matmul(w.as_ref(), us_sqrt.as_ref());
    let parts = linalg::svd(m.as_ref(), rank > m.nrows().min(m.ncols()))?;
    let a = parts.u.get(.., ..rank).to_owned();
    let inv_sqrt_ut = Mat::from_fn(n, n, |i, j| gs.u[(j, i)] / gs.s[i].sqrt());
    let b = linalg::matmul(sigma_vt(&parts, rank).as_ref(), inv_sqrt_ut.as_ref());
    let p = Projected {
        a,
        b,
        degenerate: false,
        gap_degenerate: is_gap_degenerate(&parts.s, rank, tol.gap_rel(T::PRECISION)),
    };
    finish(p, SolverMethod::GramSvd, PathTaken::Gram, started)
}

/// Gram baseline: `U_s S U_s^T = svd(X X^T)`, SVD of `W U_s S^{1/2}`,
/// `B = Sigma_r V_r^T S^{-1/2} U_s^T`.
pub fn solve_gram_svd(instance: &ProblemInstance) -> Result<Solution> {
    dispatch!(instance.precision(), solve_gram_svd_imp(instance, &Tolerances::default()))
}

/// Runs `method` on `instance`. [`SolverMethod::CoalaQr`] honours `mu`.
pub fn solve(instance: &ProblemInstance, method: SolverMethod) -> Result<Solution> {
    match method {
        SolverMethod::CoalaQr => solve_regularized(instance),
        SolverMethod::CoalaDirect => solve_projection(instance.w(), instance.x(), instance.rank()),
        SolverMethod::Reference => solve_reference(instance),
        SolverMethod::GramCholesky => solve_gram_cholesky(instance),
        SolverMethod::GramSvd => solve_gram_svd(instance),
        SolverMethod::Alpha(a) => solve_alpha(&instance.clone().with_alpha(a)),
    }
}
