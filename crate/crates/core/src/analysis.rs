//! Empirical studies of the solvers: convergence of the regularized solution,
//! its dependence on the singular gap, precision loss of the Gram baselines,
//! and timings of the R-factor strategies.
//!
//! Every study returns a [`StudyReport`] that serialises to CSV with a fixed
//! column set per study kind, plus a JSON sidecar carrying the metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::matcore::{DenseMatrix, Precision, ProblemInstance, SpectralSummary, Tolerances};
use crate::tsqr::{self, ChunkSource, RFactor, TsqrPlan, TsqrStrategy};
use crate::wlra::{self, SolverMethod};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;

/// Seeded generator used by every synthetic fixture.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` points from `10^start` to `10^end`, evenly spaced in the exponent.
pub fn logspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![10f64.powf(start)],
        _ => (0..count)
            .map(|i| 10f64.powf(start + (end - start) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Standard normal `rows x cols` matrix in double precision.
pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, Precision::Double, |_, _| rng.sample(StandardNormal))
        .expect("finite Gaussian draws")
}

fn orthonormal_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat<f64> {
    let g = Mat::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.compute_thin_Q();
    let r = qr.thin_R();
    // Sign fix on R's diagonal makes Q Haar distributed.
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            for i in 0..rows {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// `rows x cols` matrix with orthonormal columns (`cols <= rows`), Haar
/// distributed.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<DenseMatrix> {
    if cols > rows {
        return Err(Error::Dimension(format!(
            "cannot fit {cols} orthonormal columns in dimension {rows}"
        )));
    }
    linalg::from_mat(orthonormal_mat(rows, cols, rng).as_ref())
}

/// `U diag(sigmas) V^T` with Haar `U` (`rows x p`) and `V` (`cols x p`),
/// `p = sigmas.len() <= min(rows, cols)`.
pub fn with_spectrum(
    rows: usize,
    cols: usize,
    sigmas: &[f64],
    rng: &mut impl Rng,
) -> Result<DenseMatrix> {
    let p = sigmas.len();
    if p == 0 || p > rows.min(cols) {
        return Err(Error::Dimension(format!(
            "{p} singular values do not fit a {rows}x{cols} matrix"
        )));
    }
    let u = orthonormal_mat(rows, p, rng);
    let v = orthonormal_mat(cols, p, rng);
    let us = Mat::from_fn(rows, p, |i, j| u[(i, j)] * sigmas[j]);
    linalg::from_mat(linalg::matmul(us.as_ref(), v.transpose()).as_ref())
}

/// The 2x2 calibration matrix whose Gram matrix rounds to `[[1, 1], [1, 1]]`
/// in single precision: `X = [[1, 0], [1, sqrt(eps)]]` with `eps` half the
/// single-precision machine epsilon, so `sqrt(eps) = 2^-12` is exact.
pub fn gram_loss_matrix() -> DenseMatrix {
    let s = 2f32.powi(-12);
    DenseMatrix::from_vec_f32(2, 2, vec![1.0, 0.0, 1.0, s]).expect("finite entries")
}

/// Exact singular values of [`gram_loss_matrix`]: `sigma_{1,2}^2 = 1 + eps/2 +- sqrt(1 + eps^2/4)`,
/// evaluated without cancellation.
pub fn gram_loss_exact_sigmas() -> (f64, f64) {
    let eps = 2f64.powi(-24);
    let root = (1.0 + eps * eps / 4.0).sqrt();
    let l1 = 1.0 + eps / 2.0 + root;
    // l1 * l2 = det(X X^T) = eps.
    (l1.sqrt(), (eps / l1).sqrt())
}

/// Smallest singular value of [`gram_loss_matrix`] as seen through both
/// single-precision preprocessing paths.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GramLoss {
    pub sigma2_exact: f64,
    /// `sqrt(lambda_min)` of the single-precision Gram matrix.
    pub sigma2_gram: f64,
    /// `sigma_min` of the single-precision R factor of `X^T`.
    pub sigma2_qr: f64,
}

impl GramLoss {
    pub fn gram_error(&self) -> f64 {
        (self.sigma2_gram - self.sigma2_exact).abs()
    }

    pub fn qr_error(&self) -> f64 {
        (self.sigma2_qr - self.sigma2_exact).abs()
    }
}

/// Forms `X X^T` and the R factor of `X^T` in single precision and reads the
/// small singular value back from each (the read-out itself is exact enough
/// in double precision not to matter).
pub fn gram_loss_example() -> Result<GramLoss> {
    let x = gram_loss_matrix();
    let xs = linalg::to_mat::<f32>(&x);
    let g = linalg::matmul(xs.as_ref(), xs.transpose());
    let g64 = Mat::<f64>::from_fn(2, 2, |i, j| g[(i, j)] as f64);
    let (lambda, _) = linalg::sym_eigen(g64.as_ref())?;
    let r = RFactor::from_samples(&x.transpose())?;
    let sigma_r = SpectralSummary::of(&r.matrix().to_precision(Precision::Double)?)?;
    Ok(GramLoss {
        sigma2_exact: gram_loss_exact_sigmas().1,
        sigma2_gram: lambda[0].max(0.0).sqrt(),
        sigma2_qr: sigma_r.sigma(2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Convergence,
    Gap,
    Stability,
    Timing,
}

impl StudyKind {
    /// Fixed CSV column names.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            StudyKind::Convergence => &[
                "mu",
                "measured_error",
                "rank_deficient_bound",
                "full_rank_bound",
                "bound_value",
                "slope",
            ],
            StudyKind::Gap => &["gap", "measured_error", "halving_ratio", "exponent"],
            StudyKind::Stability => &["method", "rank", "rel_error", "note"],
            StudyKind::Timing => &[
                "strategy",
                "n",
                "k",
                "chunk_rows",
                "median_seconds",
                "min_seconds",
                "max_seconds",
                "peak_scalars",
                "note",
            ],
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyKind::Convergence => "convergence",
            StudyKind::Gap => "gap",
            StudyKind::Stability => "stability",
            StudyKind::Timing => "timing",
        })
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(StudyKind::Convergence),
            "gap" => Ok(StudyKind::Gap),
            "stability" => Ok(StudyKind::Stability),
            "timing" => Ok(StudyKind::Timing),
            other => Err(Error::InvalidArgument(format!("unknown study kind `{other}`"))),
        }
    }
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Field {
    Num(f64),
    Text(String),
}

impl Field {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Field::Num(v) => Some(*v),
            Field::Text(_) => None,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Num(v) if v.is_infinite() => f.write_str(if *v > 0.0 { "inf" } else { "-inf" }),
            Field::Num(v) if v.fract() == 0.0 && v.abs() < 1e15 => write!(f, "{v}"),
            Field::Num(v) => write!(f, "{v:e}"),
            Field::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Num(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Num(v as f64)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StudyMetadata {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub precision: Option<Precision>,
    pub strategy: Option<String>,
}

/// Tabular result of one study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub metadata: StudyMetadata,
    /// Scalar results that do not belong to a single row (fitted slopes,
    /// violation counts).
    pub summary: BTreeMap<String, f64>,
    #[serde(skip)]
    rows: Vec<Vec<Field>>,
}

impl StudyReport {
    fn new(kind: StudyKind, metadata: StudyMetadata) -> Self {
        Self {
            kind,
            metadata,
            summary: BTreeMap::new(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.kind.columns().len());
        self.rows.push(row);
    }

    pub fn columns(&self) -> &'static [&'static str] {
        self.kind.columns()
    }

    pub fn rows(&self) -> &[Vec<Field>] {
        &self.rows
    }

    /// Values of a column by name; `None` for unknown columns.
    pub fn column(&self, name: &str) -> Option<Vec<&Field>> {
        let idx = self.columns().iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[idx]).collect())
    }

    /// Numeric values of a column (text cells are skipped).
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        self.column(name)
            .map(|c| c.into_iter().filter_map(Field::as_f64).collect())
            .unwrap_or_default()
    }

    /// Rows of a convergence study whose measured error exceeds the bound.
    pub fn bound_violations(&self) -> usize {
        if self.kind != StudyKind::Convergence {
            return 0;
        }
        let measured = self.numbers("measured_error");
        let bound = self.numbers("bound_value");
        measured
            .iter()
            .zip(&bound)
            .filter(|(m, b)| b.is_finite() && **m > **b)
            .count()
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns())?;
        for row in &self.rows {
            w.write_record(row.iter().map(ToString::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    /// Metadata sidecar: kind, seed, dimensions, precision, strategy, summary.
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn difference_norm(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let d: Vec<f64> = a
        .to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(x, y)| x - y)
        .collect();
    DenseMatrix::from_vec_f64(a.rows(), a.cols(), d)
        .map(|m| m.frobenius_norm())
        .unwrap_or(f64::NAN)
}

/// Options of [`convergence_study`].
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceOptions {
    /// Multiplies every bound before comparison. Values below 1 deliberately
    /// falsify the bounds (negative control for violation detection).
    pub bound_scale: f64,
    pub seed: u64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            bound_scale: 1.0,
            seed: DEFAULT_SEED,
        }
    }
}

fn check_mu_grid(mu_grid: &[f64]) -> Result<()> {
    if mu_grid.is_empty() {
        return Err(Error::InvalidArgument("mu grid is empty".into()));
    }
    if mu_grid.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidArgument(
            "mu grid entries must be finite and >= 0".into(),
        ));
    }
    if mu_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "mu grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Fitted slope of `log error` against `log x` over `(x, error)` pairs,
/// skipping zero `x` and errors under the noise floor.
fn fitted_slope(points: &[(f64, f64)], floor: f64) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(x, e)| *x > 0.0 && *e >= floor && e.is_finite())
        .map(|(x, e)| (x.ln(), e.ln()))
        .unzip();
    least_squares_slope(&xs, &ys).unwrap_or(f64::NAN)
}

/// Measures `||W_0 - W_mu||_F` over `mu_grid` (strictly decreasing, a
/// trailing zero is allowed) and evaluates the applicable convergence bounds:
///
/// * full row rank X: `||W||_2 ||W||_F mu / ((sigma_r - sigma_{r+1})(WX) sigma_min(X))`;
/// * `rank(X) = k >= r` with `k < n`:
///   `2 ||W||_2^2 ||W||_F (sigma_1(X)/sigma_k(X) + max(1, mu / (4 sigma_k(X)^2))) mu
///    / (sigma_r^2(WX) - sigma_{r+1}^2(WX))`.
///
/// The slope is fitted on the smaller half of the grid. Both solutions are
/// computed in double precision.
pub fn convergence_study(
    w: &DenseMatrix,
    x: &DenseMatrix,
    rank: usize,
    mu_grid: &[f64],
    options: &ConvergenceOptions,
) -> Result<StudyReport> {
    check_mu_grid(mu_grid)?;
    let w = w.to_precision(Precision::Double)?;
    let x = x.to_precision(Precision::Double)?;
    let base = ProblemInstance::new(w.clone(), x.clone(), rank)?;
    let (m, n, k) = base.dims();

    let wx = SpectralSummary::of(&w.matmul_f64(&x)?)?;
    let gap = wx.gap_at(rank);
    if !(gap > Tolerances::default().gap_rel(Precision::Double) * wx.sigma(1)) {
        return Err(Error::ZeroGap {
            rank,
            sigma: wx.sigma(rank),
        });
    }
    let sw = SpectralSummary::of(&w)?;
    let (w2, wf) = (sw.sigma(1), w.frobenius_norm());
    let sx = SpectralSummary::of(&x)?;
    let rank_x = numerical_rank(&sx, n.max(k));
    let full_row_rank = rank_x == n;
    let full_column_rank = rank_x == k && k < n && k >= rank;
    let smin = sx.sigma(rank_x.max(1));
    let squared_gap = wx.sigma(rank).powi(2) - wx.sigma(rank + 1).powi(2);

    let w0 = wlra::solve_coala(&base)?.approximation();
    let mut report = StudyReport::new(
        StudyKind::Convergence,
        StudyMetadata {
            seed: options.seed,
            m,
            n,
            k,
            r: rank,
            precision: Some(Precision::Double),
            strategy: None,
        },
    );
    let mut points = Vec::with_capacity(mu_grid.len());
    let mut bounds = Vec::with_capacity(mu_grid.len());
    for &mu in mu_grid {
        let wmu = wlra::solve_regularized(&base.clone().with_mu(mu)?)?.approximation();
        let measured = difference_norm(&w0, &wmu);
        let rank_deficient = if full_column_rank {
            let growth = sx.sigma(1) / smin + (mu / (4.0 * smin * smin)).max(1.0);
            2.0 * w2 * w2 * wf * growth * mu / squared_gap * options.bound_scale
        } else {
            f64::NAN
        };
        let full_rank = if full_row_rank {
            w2 * wf * mu / (gap * smin) * options.bound_scale
        } else {
            f64::NAN
        };
        let bound = [rank_deficient, full_rank]
            .into_iter()
            .filter(|b| b.is_finite())
            .fold(f64::NAN, f64::min);
        points.push((mu, measured));
        bounds.push((rank_deficient, full_rank, bound));
    }
    let half = &points[points.len() / 2..];
    let slope = fitted_slope(half, 1e3 * f64::EPSILON * wf);
    for (&(mu, measured), &(rd, fr, bound)) in points.iter().zip(&bounds) {
        report.push(vec![
            mu.into(),
            measured.into(),
            rd.into(),
            fr.into(),
            bound.into(),
            slope.into(),
        ]);
    }
    report.summary.insert("slope".into(), slope);
    report
        .summary
        .insert("violations".into(), report.bound_violations() as f64);
    report
        .summary
        .insert("full_row_rank".into(), f64::from(u8::from(full_row_rank)));
    Ok(report)
}

fn numerical_rank(s: &SpectralSummary, dim: usize) -> usize {
    let cutoff = dim as f64 * f64::EPSILON * s.sigma(1);
    s.sigmas().iter().filter(|v| **v > cutoff).count()
}

/// Fixed part of a gap study: dimensions, the spectrum of `WX` (all values
/// except `sigma_r`, `sigma_{r+1}` stay fixed), the spectrum of the
/// calibration data and the seed that fixes every singular vector.
#[derive(Debug, Clone)]
pub struct GapTemplate {
    pub m: usize,
    pub n: usize,
    /// Descending spectrum of `WX`, length `min(m, n)`. Entries `r` and
    /// `r + 1` (1-based) are replaced by `c +- gap/2` around their midpoint.
    pub spectrum: Vec<f64>,
    /// Spectrum of the square `n x n` calibration matrix.
    pub x_spectrum: Vec<f64>,
    pub seed: u64,
}

impl GapTemplate {
    /// A well-separated template: `WX` spectrum `2, 1.9, ..` with the pair at
    /// `r`, `r + 1` centred on `1`, calibration spectrum from 1 to 0.5.
    pub fn standard(m: usize, n: usize, rank: usize, seed: u64) -> Self {
        let p = m.min(n);
        let spectrum = (0..p)
            .map(|i| match i + 1 {
                i1 if i1 < rank => 3.0 - i as f64 * 0.1,
                i1 if i1 > rank + 1 => 0.5 - (i1 - rank - 1) as f64 * 0.02,
                _ => 1.0,
            })
            .map(|v: f64| v.max(1e-3))
            .collect();
        Self {
            m,
            n,
            spectrum,
            x_spectrum: (0..n).map(|i| 1.0 - 0.5 * i as f64 / n.max(2) as f64).collect(),
            seed,
        }
    }
}

/// Measures `||W_0 - W_mu||_F` at fixed `mu` while only the gap
/// `sigma_r(WX) - sigma_{r+1}(WX)` varies. `W = M X^{-1}` where `M` has fixed
/// singular vectors and the template spectrum, so `WX = M`. Reports the error
/// ratio per halving of the gap between consecutive grid points and the
/// exponent of error against gap fitted over the smaller half of the grid.
pub fn gap_study(
    template: &GapTemplate,
    gap_grid: &[f64],
    rank: usize,
    mu: f64,
) -> Result<StudyReport> {
    let p = template.m.min(template.n);
    if template.spectrum.len() != p || template.x_spectrum.len() != template.n {
        return Err(Error::Dimension(format!(
            "template spectra have lengths {} and {}, expected {p} and {}",
            template.spectrum.len(),
            template.x_spectrum.len(),
            template.n
        )));
    }
    if rank == 0 || rank >= p {
        return Err(Error::InvalidArgument(format!(
            "gap study needs 1 <= r < {p}, got {rank}"
        )));
    }
    if gap_grid.is_empty() || gap_grid.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument("gap grid must hold positive values".into()));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("mu must be finite and >= 0, got {mu}")));
    }
    let centre = 0.5 * (template.spectrum[rank - 1] + template.spectrum[rank]);
    let above = if rank >= 2 { template.spectrum[rank - 2] } else { f64::INFINITY };
    let below = if rank + 2 <= p { template.spectrum[rank + 1] } else { 0.0 };
    for &g in gap_grid {
        if centre + g / 2.0 >= above || centre - g / 2.0 <= below {
            return Err(Error::InvalidArgument(format!(
                "gap {g} around {centre} collides with the fixed neighbours {below} and {above}"
            )));
        }
    }

    let mut rng = rng(template.seed);
    let u = orthonormal_mat(template.m, p, &mut rng);
    let v = orthonormal_mat(template.n, p, &mut rng);
    let x = with_spectrum(template.n, template.n, &template.x_spectrum, &mut rng)?;
    let x_mat = linalg::to_mat::<f64>(&x);
    let x_inv = x_mat.as_ref().partial_piv_lu().inverse();

    let mut report = StudyReport::new(
        StudyKind::Gap,
        StudyMetadata {
            seed: template.seed,
            m: template.m,
            n: template.n,
            k: template.n,
            r: rank,
            precision: Some(Precision::Double),
            strategy: None,
        },
    );
    let mut points = Vec::with_capacity(gap_grid.len());
    let mut floor = 0.0f64;
    for &g in gap_grid {
        let mut sigmas = template.spectrum.clone();
        sigmas[rank - 1] = centre + g / 2.0;
        sigmas[rank] = centre - g / 2.0;
        let us = Mat::from_fn(template.m, p, |i, j| u[(i, j)] * sigmas[j]);
        let target = linalg::matmul(us.as_ref(), v.transpose());
        let w = linalg::from_mat(linalg::matmul(target.as_ref(), x_inv.as_ref()).as_ref())?;
        floor = floor.max(1e3 * f64::EPSILON * w.frobenius_norm());
        let base = ProblemInstance::new(w, x.clone(), rank)?;
        let w0 = wlra::solve_coala(&base)?.approximation();
        let wmu = wlra::solve_regularized(&base.with_mu(mu)?)?.approximation();
        points.push((g, difference_norm(&w0, &wmu)));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].0.total_cmp(&points[a].0));
    let sorted: Vec<(f64, f64)> = order.iter().map(|&i| points[i]).collect();
    let exponent = fitted_slope(&sorted[sorted.len() / 2..], floor);
    for (i, &(g, e)) in sorted.iter().enumerate() {
        let ratio = if i == 0 {
            f64::NAN
        } else {
            let (gp, ep) = sorted[i - 1];
            (e / ep).powf(2f64.ln() / (gp / g).ln())
        };
        report.push(vec![g.into(), e.into(), ratio.into(), exponent.into()]);
    }
    report.summary.insert("exponent".into(), exponent);
    Ok(report)
}

/// Relative error `||W'_method - W'_ref||_F / ||W'_ref||_F` per rank for the
/// inversion-free solver and both Gram baselines at `precision`, against the
/// double-precision inversion-free answer. Baseline failures become rows with
/// infinite error and the failure in the note column.
pub fn stability_study(
    w: &DenseMatrix,
    x: &DenseMatrix,
    rank_grid: &[usize],
    precision: Precision,
    seed: u64,
) -> Result<StudyReport> {
    let wd = w.to_precision(Precision::Double)?;
    let xd = x.to_precision(Precision::Double)?;
    let wp = w.to_precision(precision)?;
    let xp = x.to_precision(precision)?;
    let (m, n) = wd.shape();
    if rank_grid.is_empty() {
        return Err(Error::InvalidArgument("rank grid is empty".into()));
    }
    let mut report = StudyReport::new(
        StudyKind::Stability,
        StudyMetadata {
            seed,
            m,
            n,
            k: xd.cols(),
            r: rank_grid.iter().copied().max().unwrap_or(0),
            precision: Some(precision),
            strategy: None,
        },
    );
    for &rank in rank_grid {
        let reference = wlra::solve_coala(&ProblemInstance::new(wd.clone(), xd.clone(), rank)?)?
            .approximation();
        let scale = reference.frobenius_norm();
        let instance = ProblemInstance::new(wp.clone(), xp.clone(), rank)?;
        for method in [
            SolverMethod::CoalaQr,
            SolverMethod::GramCholesky,
            SolverMethod::GramSvd,
        ] {
            let (error, note) = match wlra::solve(&instance, method) {
                Ok(s) => {
                    let e = difference_norm(&s.approximation(), &reference) / scale;
                    if e.is_finite() {
                        (e, String::new())
                    } else {
                        (f64::INFINITY, "non-finite result".to_string())
                    }
                }
                Err(e) if e.is_numerical() => (f64::INFINITY, e.to_string()),
                Err(e) => return Err(e),
            };
            report.push(vec![
                method.to_string().into(),
                rank.into(),
                error.into(),
                note.into(),
            ]);
        }
    }
    Ok(report)
}

/// Gaussian sample chunks generated on the fly, so arbitrarily tall
/// calibration data can be streamed without being stored.
pub struct GaussianChunks {
    rng: ChaCha8Rng,
    n: usize,
    remaining: usize,
    chunk_rows: usize,
}

impl GaussianChunks {
    pub fn new(n: usize, total_rows: usize, chunk_rows: usize, seed: u64) -> Result<Self> {
        if n == 0 || chunk_rows == 0 || total_rows == 0 {
            return Err(Error::InvalidArgument(
                "dimensions and chunk size must be >= 1".into(),
            ));
        }
        Ok(Self {
            rng: rng(seed),
            n,
            remaining: total_rows,
            chunk_rows,
        })
    }
}

impl Iterator for GaussianChunks {
    type Item = Result<DenseMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let rows = self.chunk_rows.min(self.remaining);
        self.remaining -= rows;
        let data = (0..rows * self.n)
            .map(|_| self.rng.sample(StandardNormal))
            .collect();
        Some(DenseMatrix::from_vec_f64(rows, self.n, data))
    }
}

/// Preprocessing strategies compared by [`timing_study`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingStrategy {
    /// Householder QR of the whole `X^T` held in memory.
    InMemoryQr,
    Sequential,
    Tree,
    /// Chunked accumulation of `X X^T` followed by an eigendecomposition.
    GramEigen,
}

impl fmt::Display for TimingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimingStrategy::InMemoryQr => "qr_reduce",
            TimingStrategy::Sequential => "tsqr_sequential",
            TimingStrategy::Tree => "tsqr_tree",
            TimingStrategy::GramEigen => "gram_eigen",
        })
    }
}

impl std::str::FromStr for TimingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qr_reduce" | "qr" => Ok(TimingStrategy::InMemoryQr),
            "tsqr_sequential" | "sequential" => Ok(TimingStrategy::Sequential),
            "tsqr_tree" | "tree" => Ok(TimingStrategy::Tree),
            "gram_eigen" | "gram" => Ok(TimingStrategy::GramEigen),
            other => Err(Error::InvalidArgument(format!("unknown timing strategy `{other}`"))),
        }
    }
}

/// Scalars above which the in-memory QR is skipped by the timing study.
pub const IN_MEMORY_LIMIT: usize = 1 << 28;

fn gram_eigen(source: &mut dyn ChunkSource) -> Result<()> {
    let mut gram: Option<Mat<f64>> = None;
    while let Some(chunk) = source.next_chunk() {
        let c = linalg::to_mat::<f64>(&chunk?);
        let g = linalg::matmul(c.transpose(), c.as_ref());
        gram = Some(match gram {
            Some(acc) => acc + g,
            None => g,
        });
    }
    let gram = gram.ok_or_else(|| Error::InvalidArgument("empty source".into()))?;
    linalg::sym_eigen(gram.as_ref())?;
    Ok(())
}

/// Wall-clock medians and spreads of the R-factor strategies on Gaussian
/// data of each `(n, k)` shape, streamed in `chunk_rows` chunks. Runs are
/// strictly sequential.
pub fn timing_study(
    shapes: &[(usize, usize)],
    strategies: &[TimingStrategy],
    chunk_rows: usize,
    repeats: usize,
    seed: u64,
) -> Result<StudyReport> {
    if repeats < 3 {
        return Err(Error::InvalidArgument(format!(
            "timing needs at least 3 repeats, got {repeats}"
        )));
    }
    if shapes.is_empty() || strategies.is_empty() {
        return Err(Error::InvalidArgument("no shapes or strategies to time".into()));
    }
    let mut report = StudyReport::new(
        StudyKind::Timing,
        StudyMetadata {
            seed,
            precision: Some(Precision::Double),
            strategy: Some(
                strategies
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ..StudyMetadata::default()
        },
    );
    for &(n, k) in shapes {
        report.metadata.n = report.metadata.n.max(n);
        report.metadata.k = report.metadata.k.max(k);
        for &strategy in strategies {
            if strategy == TimingStrategy::InMemoryQr && n * k > IN_MEMORY_LIMIT {
                report.push(vec![
                    strategy.to_string().into(),
                    n.into(),
                    k.into(),
                    chunk_rows.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    "skipped: exceeds in-memory limit".into(),
                ]);
                continue;
            }
            let mut times = Vec::with_capacity(repeats);
            let mut peak = f64::NAN;
            for _ in 0..repeats {
                let mut source = GaussianChunks::new(n, k, chunk_rows, seed)?;
                let started = Instant::now();
                match strategy {
                    TimingStrategy::InMemoryQr => {
                        let chunks: Vec<DenseMatrix> = source.collect::<Result<_>>()?;
                        let xt = DenseMatrix::vstack(&chunks)?;
                        drop(chunks);
                        let started = Instant::now();
                        RFactor::from_samples(&xt)?;
                        times.push(started.elapsed().as_secs_f64());
                        continue;
                    }
                    TimingStrategy::Sequential => {
                        let (_, stats) = tsqr::tsqr_sequential_with_stats(&mut source)?;
                        peak = stats.peak_scalars as f64;
                    }
                    TimingStrategy::Tree => {
                        let plan = TsqrPlan::new(TsqrStrategy::Tree, chunk_rows, 1)?;
                        tsqr::tsqr_tree(&mut source, &plan)?;
                    }
                    TimingStrategy::GramEigen => gram_eigen(&mut source)?,
                }
                times.push(started.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            report.push(vec![
                strategy.to_string().into(),
                n.into(),
                k.into(),
                chunk_rows.into(),
                times[times.len() / 2].into(),
                times[0].into(),
                times[times.len() - 1].into(),
                peak.into(),
                "".into(),
            ]);
        }
    }
    Ok(report)
}

/// Calibration data `n x k` with singular values `logspace(0, -log10(condition), min(n, k))`.
pub fn conditioned_data(
    n: usize,
    k: usize,
    condition: f64,
    rng: &mut impl Rng,
) -> Result<DenseMatrix> {
    let p = n.min(k);
    with_spectrum(n, k, &logspace(0.0, -condition.log10(), p), rng)
}

/// Seeded synthetic instances shared by the CLI, the documentation and the
/// acceptance suite. `X` is returned as `n x k` (features by samples).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    /// `8 x 6` weights, `6 x 20` data of condition 10, rank 2.
    WellConditioned,
    /// `12 x 10` weights, full-row-rank `10 x 30` data, rank 3.
    FullRank,
    /// `12 x 10` weights, `10 x 6` data (fewer samples than features), rank 3.
    RankDeficient,
    /// `48 x 32` weights, `32 x 256` data with singular values spanning `10^8`, rank 8.
    IllConditioned,
    /// `diag(2, 1)` weights and the 2x2 single-precision Gram-loss matrix, rank 1.
    GramLoss,
}

impl Fixture {
    pub const ALL: [Fixture; 5] = [
        Fixture::WellConditioned,
        Fixture::FullRank,
        Fixture::RankDeficient,
        Fixture::IllConditioned,
        Fixture::GramLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::WellConditioned => "well-conditioned",
            Fixture::FullRank => "full-rank",
            Fixture::RankDeficient => "rank-deficient",
            Fixture::IllConditioned => "ill-conditioned",
            Fixture::GramLoss => "gram-loss",
        }
    }

    /// Suggested rank for the instance.
    pub fn rank(self) -> usize {
        match self {
            Fixture::WellConditioned => 2,
            Fixture::FullRank | Fixture::RankDeficient => 3,
            Fixture::IllConditioned => 8,
            Fixture::GramLoss => 1,
        }
    }

    /// `(W, X)` for `seed`.
    pub fn build(self, seed: u64) -> Result<(DenseMatrix, DenseMatrix)> {
        let mut g = rng(seed);
        match self {
            Fixture::WellConditioned => Ok((
                with_spectrum(8, 6, &logspace(0.0, -1.0, 6), &mut g)?,
                conditioned_data(6, 20, 10.0, &mut g)?,
            )),
            Fixture::FullRank => Ok((
                with_spectrum(12, 10, &logspace(0.0, -1.0, 10), &mut g)?,
                conditioned_data(10, 30, 1e2, &mut g)?,
            )),
            Fixture::RankDeficient => Ok((
                with_spectrum(12, 10, &logspace(0.0, -1.0, 10), &mut g)?,
                conditioned_data(10, 6, 1e2, &mut g)?,
            )),
            Fixture::IllConditioned => Ok((
                with_spectrum(48, 32, &logspace(0.0, -1.0, 32), &mut g)?,
                conditioned_data(32, 256, 1e8, &mut g)?,
            )),
            Fixture::GramLoss => Ok((
                DenseMatrix::from_vec_f32(2, 2, vec![2.0, 0.0, 0.0, 1.0])?,
                gram_loss_matrix(),
            )),
        }
    }
}

impl std::str::FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fixture::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fixture `{s}`")))
    }
}
