//! Slow, independent reference implementations used to certify the solvers.
//!
//! Nothing here goes through the dense backend: the SVD and the symmetric
//! eigensolver are textbook cyclic Jacobi sweeps on plain `Vec<f64>` storage,
//! and every closed form is transcribed literally. Double precision only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matcore::{DenseMatrix, Precision};

/// Guard on `sigma_min / sigma_max` of X for the closed forms.
pub const CONDITION_GUARD: f64 = 1e-10;

/// Column-major scratch matrix.
#[derive(Clone)]
struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn of(m: &DenseMatrix) -> Self {
        let mut g = Self::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                g.set(i, j, m.get(i, j));
            }
        }
        g
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    fn mul(&self, other: &Grid) -> Grid {
        assert_eq!(self.cols, other.rows);
        let mut out = Grid::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for l in 0..self.cols {
                let b = other.get(l, j);
                if b != 0.0 {
                    for i in 0..self.rows {
                        out.data[j * self.rows + i] += self.get(i, l) * b;
                    }
                }
            }
        }
        out
    }

    fn to_dense(&self) -> Result<DenseMatrix> {
        DenseMatrix::from_fn(self.rows, self.cols, Precision::Double, |i, j| self.get(i, j))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin SVD `A = U diag(s) V^T` by one-sided Jacobi rotations, `s` descending.
struct JacobiSvd {
    u: Grid,
    s: Vec<f64>,
    v: Grid,
}

fn jacobi_svd(a: &Grid) -> JacobiSvd {
    if a.rows < a.cols {
        let t = jacobi_svd(&a.transpose());
        return JacobiSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = (a.rows, a.cols);
    let mut work = a.clone();
    let mut v = Grid::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(work.col(p), work.col(p));
                let beta = dot(work.col(q), work.col(q));
                let gamma = dot(work.col(p), work.col(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for g in [&mut work, &mut v] {
                    for i in 0..g.rows {
                        let (x, y) = (g.get(i, p), g.get(i, q));
                        g.set(i, p, c * x - s * y);
                        g.set(i, q, s * x + c * y);
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| dot(work.col(j), work.col(j)).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = Grid::zeros(m, n);
    let mut vs = Grid::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        for i in 0..m {
            u.set(i, dst, if sigma > 0.0 { work.get(i, src) / sigma } else { 0.0 });
        }
        for i in 0..n {
            vs.set(i, dst, v.get(i, src));
        }
    }
    JacobiSvd { u, s, v: vs }
}

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigen(g: &Grid) -> (Vec<f64>, Grid) {
    let n = g.rows;
    let mut a = g.clone();
    let mut v = Grid::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| a.get(i, i).powi(2)).sum();
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let (x, y) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * x - s * y);
                    a.set(k, q, s * x + c * y);
                }
                for k in 0..n {
                    let (x, y) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * x - s * y);
                    a.set(q, k, s * x + c * y);
                }
                for k in 0..n {
                    let (x, y) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * x - s * y);
                    v.set(k, q, s * x + c * y);
                }
            }
        }
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v)
}

/// `V diag(f(lambda)) V^T` for the symmetric matrix `g`.
fn spectral_function(g: &Grid, f: impl Fn(f64) -> f64) -> Grid {
    let (lambda, v) = jacobi_eigen(g);
    let n = g.rows;
    let mut scaled = v.clone();
    for (j, l) in lambda.iter().enumerate() {
        let fl = f(*l);
        for i in 0..n {
            scaled.set(i, j, v.get(i, j) * fl);
        }
    }
    scaled.mul(&v.transpose())
}

fn require_double(m: &DenseMatrix, name: &str) -> Result<()> {
    if m.precision() != Precision::Double {
        return Err(Error::InvalidArgument(format!(
            "oracles run in double precision only; {name} is {}",
            m.precision()
        )));
    }
    Ok(())
}

fn check_rank(rank: usize, max: usize) -> Result<()> {
    if rank == 0 || rank > max {
        return Err(Error::InvalidArgument(format!("rank {rank} outside 1..={max}")));
    }
    Ok(())
}

/// `U_r Sigma_r V_r^T` of a Jacobi SVD.
fn truncate(svd: &JacobiSvd, rank: usize) -> Grid {
    let (m, n) = (svd.u.rows, svd.v.rows);
    let mut out = Grid::zeros(m, n);
    for l in 0..rank.min(svd.s.len()) {
        for j in 0..n {
            let b = svd.s[l] * svd.v.get(j, l);
            for i in 0..m {
                out.data[j * m + i] += svd.u.get(i, l) * b;
            }
        }
    }
    out
}

/// Eckart-Young: best rank-r approximation of `m` and its residual
/// `sqrt(sum_{i > r} sigma_i^2)`.
pub fn oracle_best_rank_r(m: &DenseMatrix, rank: usize) -> Result<(DenseMatrix, f64)> {
    require_double(m, "M")?;
    check_rank(rank, m.rows().min(m.cols()))?;
    let svd = jacobi_svd(&Grid::of(m));
    let residual = svd.s[rank..].iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok((truncate(&svd, rank).to_dense()?, residual))
}

/// Full-row-rank check on X shared by the closed forms, returning `X X^T`.
fn checked_gram(w: &DenseMatrix, x: &DenseMatrix, rank: usize) -> Result<Grid> {
    require_double(w, "W")?;
    require_double(x, "X")?;
    if w.cols() != x.rows() {
        return Err(Error::Dimension(format!(
            "W has {} columns but X has {} rows",
            w.cols(),
            x.rows()
        )));
    }
    check_rank(rank, w.rows().min(w.cols()))?;
    let xg = Grid::of(x);
    let s = jacobi_svd(&xg).s;
    let ratio = if x.cols() < x.rows() {
        0.0
    } else {
        s[s.len() - 1] / s[0]
    };
    if !(ratio > CONDITION_GUARD) {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(xg.mul(&xg.transpose()))
}

/// Manton et al. closed form with `Q1 = (X X^T)^{1/2}`, `Q2 = I`:
/// `W' = U Sigma_r V^T Q1^{-1/2}` where `U Sigma V^T = W Q1^{1/2}`, all
/// square roots taken of the symmetric positive definite Gram matrix.
pub fn oracle_manton(w: &DenseMatrix, x: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    let gram = checked_gram(w, x, rank)?;
    let q1_half = spectral_function(&gram, f64::sqrt);
    let q1_inv_half = spectral_function(&gram, |l| 1.0 / l.sqrt());
    let svd = jacobi_svd(&Grid::of(w).mul(&q1_half));
    truncate(&svd, rank).mul(&q1_inv_half).to_dense()
}

/// Closed form of the `alpha = 2` problem: `W' = U_r Sigma_r V_r^T (X X^T)^{-1}`
/// with `U Sigma V^T = W X X^T`. Errors when `X X^T` is numerically singular.
pub fn oracle_corda_closed_form(w: &DenseMatrix, x: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    let gram = checked_gram(w, x, rank)?;
    let inverse = spectral_function(&gram, |l| 1.0 / l);
    let svd = jacobi_svd(&Grid::of(w).mul(&gram));
    truncate(&svd, rank).mul(&inverse).to_dense()
}

/// `||(W - W') X||_F` evaluated naively.
pub fn oracle_objective(w: &DenseMatrix, approx: &DenseMatrix, x: &DenseMatrix) -> Result<f64> {
    if w.shape() != approx.shape() || w.cols() != x.rows() {
        return Err(Error::Dimension(format!(
            "W {}x{}, W' {}x{}, X {}x{}",
            w.rows(),
            w.cols(),
            approx.rows(),
            approx.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let mut d = Grid::of(w);
    let a = Grid::of(approx);
    for (v, b) in d.data.iter_mut().zip(&a.data) {
        *v -= b;
    }
    let dx = d.mul(&Grid::of(x));
    Ok(dx.data.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Smallest objective over `count` sampled rank-1 candidates `u v^T`, with no
/// SVD involved. Half are Gaussian draws scaled to `||W||_F`; the other half
/// perturb `around` (when given) at relative scales `1e-1 .. 1e-6`, probing
/// the neighbourhood of a claimed optimum.
pub fn brute_force_rank_one(
    w: &DenseMatrix,
    x: &DenseMatrix,
    around: Option<&DenseMatrix>,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let (m, n) = w.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = w.frobenius_norm().max(f64::MIN_POSITIVE);
    // A rank-1 `around` is split as u v^T with u its dominant column direction.
    let centre = match around {
        Some(c) => {
            let svd = jacobi_svd(&Grid::of(c));
            let u: Vec<f64> = (0..m).map(|i| svd.u.get(i, 0) * svd.s[0]).collect();
            let v: Vec<f64> = (0..n).map(|j| svd.v.get(j, 0)).collect();
            Some((u, v))
        }
        None => None,
    };
    let mut best = f64::INFINITY;
    let mut candidate = vec![0.0; m * n];
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    for trial in 0..count {
        let local = trial % 2 == 1 && centre.is_some();
        if let (true, Some((cu, cv))) = (local, &centre) {
            let step = 10f64.powi(-(1 + (trial / 2 % 6) as i32));
            for (ui, c) in u.iter_mut().zip(cu) {
                *ui = c + step * scale * rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt();
            }
            for (vj, c) in v.iter_mut().zip(cv) {
                *vj = c + step * rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt();
            }
        } else {
            for ui in u.iter_mut() {
                *ui = rng.sample(StandardNormal);
            }
            for vj in v.iter_mut() {
                *vj = rng.sample(StandardNormal);
            }
            let norm = (dot(&u, &u) * dot(&v, &v)).sqrt();
            let target = scale * rng.random::<f64>() * 1.5;
            u.iter_mut().for_each(|e| *e *= target / norm);
        }
        for i in 0..m {
            for j in 0..n {
                candidate[i * n + j] = u[i] * v[j];
            }
        }
        let approx = DenseMatrix::from_vec_f64(m, n, candidate.clone())?;
        best = best.min(oracle_objective(w, &approx, x)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> DenseMatrix {
        let n = values.len();
        DenseMatrix::from_fn(n, n, Precision::Double, |i, j| if i == j { values[i] } else { 0.0 })
            .unwrap()
    }

    #[test]
    fn best_rank_two_of_diagonal() {
        let (approx, residual) = oracle_best_rank_r(&diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert!((residual - 1.0).abs() < 1e-14);
        assert!((approx.get(0, 0) - 3.0).abs() < 1e-14);
        assert!(approx.get(2, 2).abs() < 1e-14);
    }

    #[test]
    fn jacobi_svd_reconstructs() {
        let a = DenseMatrix::from_fn(5, 3, Precision::Double, |i, j| ((i * 7 + j * 3) as f64).cos())
            .unwrap();
        let (full, residual) = oracle_best_rank_r(&a, 3).unwrap();
        assert_eq!(residual, 0.0);
        for i in 0..5 {
            for j in 0..3 {
                assert!((full.get(i, j) - a.get(i, j)).abs() < 1e-13);
            }
        }
        let wide = a.transpose();
        let (full, _) = oracle_best_rank_r(&wide, 3).unwrap();
        assert!((full.get(2, 4) - wide.get(2, 4)).abs() < 1e-13);
    }

    #[test]
    fn identity_data_closed_forms_are_truncated_svd() {
        let w = DenseMatrix::from_fn(3, 3, Precision::Double, |i, j| (1 + i * 3 + j * j) as f64).unwrap();
        let x = DenseMatrix::identity(3, Precision::Double).unwrap();
        let (best, _) = oracle_best_rank_r(&w, 1).unwrap();
        for approx in [oracle_manton(&w, &x, 1).unwrap(), oracle_corda_closed_form(&w, &x, 1).unwrap()] {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((approx.get(i, j) - best.get(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_data_is_refused() {
        let w = diag(&[1.0, 2.0]);
        let x = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(oracle_manton(&w, &x, 1), Err(Error::RankDeficient { .. })));
        assert!(oracle_corda_closed_form(&w, &x, 1).is_err());
        assert!(oracle_best_rank_r(&w.to_precision(Precision::Single).unwrap(), 1).is_err());
    }

    #[test]
    fn symmetric_eigen_square_root() {
        let g = Grid::of(&DenseMatrix::from_rows(&[[4.0, 1.0], [1.0, 3.0]]).unwrap());
        let h = spectral_function(&g, f64::sqrt);
        let back = h.mul(&h);
        for (a, b) in back.data.iter().zip(&g.data) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
