//! Out-of-core R-factor computation over chunks of `X^T`.
//!
//! A chunk is a block of samples, `k_i x n` with one row per sample. The
//! sequential chain folds each chunk into the running R; the tree variant QRs
//! every chunk independently and combines pairs of R factors level by level.

use std::fs;
use std::path::{Path, PathBuf};

use faer::{Mat, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ClmxRowBlocks;
use crate::linalg::{self, Real};
use crate::matcore::{DenseMatrix, Precision};

/// Default rows per chunk.
pub const DEFAULT_CHUNK_ROWS: usize = 8192;

/// Upper-triangular `R` (`n x n`) with `R^T R` equal to the Gram matrix of the
/// data it was computed from, plus `mu I` after augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct RFactor {
    r: DenseMatrix,
    short_data: bool,
}

impl RFactor {
    /// Wraps an upper-triangular square matrix. `short_data` records that
    /// fewer than `n` samples went into it, so trailing rows are zero.
    pub fn from_parts(r: DenseMatrix, short_data: bool) -> Result<Self> {
        if r.rows() != r.cols() {
            return Err(Error::Dimension(format!(
                "R must be square, got {}x{}",
                r.rows(),
                r.cols()
            )));
        }
        for i in 1..r.rows() {
            for j in 0..i {
                if r.get(i, j) != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "R is not upper triangular: entry ({i}, {j}) = {}",
                        r.get(i, j)
                    )));
                }
            }
        }
        Ok(Self { r, short_data })
    }

    /// R factor of a sample-major block (`k x n`) in its own precision.
    pub fn from_samples(samples: &DenseMatrix) -> Result<Self> {
        let r = match samples.precision() {
            Precision::Single => leaf::<f32>(samples)?,
            Precision::Double => leaf::<f64>(samples)?,
        };
        Self::from_parts(r, samples.rows() < samples.cols())
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.r
    }

    pub fn n(&self) -> usize {
        self.r.rows()
    }

    pub fn precision(&self) -> Precision {
        self.r.precision()
    }

    pub fn short_data(&self) -> bool {
        self.short_data
    }

    /// `R^T R` in double precision.
    pub fn gram(&self) -> DenseMatrix {
        let r = linalg::to_mat::<f64>(&self.r);
        let g = linalg::matmul(r.transpose(), r.as_ref());
        linalg::from_mat(g.as_ref()).expect("Gram of a finite R is finite")
    }
}

fn leaf<T: Real>(samples: &DenseMatrix) -> Result<DenseMatrix> {
    linalg::from_mat(leaf_r::<T>(samples).as_ref())
}

/// A pull-based sequence of sample blocks `X_i^T`, each `k_i x n`.
///
/// Any iterator of `Result<DenseMatrix>` is a source, including
/// [`ClmxRowBlocks`] over a single file.
pub trait ChunkSource {
    fn next_chunk(&mut self) -> Option<Result<DenseMatrix>>;
}

impl<I: Iterator<Item = Result<DenseMatrix>>> ChunkSource for I {
    fn next_chunk(&mut self) -> Option<Result<DenseMatrix>> {
        self.next()
    }
}

/// Splits an in-memory sample-major matrix into row blocks.
pub struct MemoryChunks<'a> {
    samples: &'a DenseMatrix,
    chunk_rows: usize,
    next_row: usize,
}

impl<'a> MemoryChunks<'a> {
    /// `samples` is `X^T` (`k x n`).
    pub fn new(samples: &'a DenseMatrix, chunk_rows: usize) -> Result<Self> {
        if chunk_rows == 0 {
            return Err(Error::InvalidArgument("chunk_rows must be >= 1".into()));
        }
        Ok(Self {
            samples,
            chunk_rows,
            next_row: 0,
        })
    }
}

impl Iterator for MemoryChunks<'_> {
    type Item = Result<DenseMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_row >= self.samples.rows() {
            return None;
        }
        let len = self.chunk_rows.min(self.samples.rows() - self.next_row);
        let block = self.samples.row_block(self.next_row, len);
        self.next_row += len;
        Some(block)
    }
}

/// Chunk files `chunk_*.clmx` in a directory, read in lexicographic order.
pub struct ChunkDir {
    files: std::vec::IntoIter<PathBuf>,
}

impl ChunkDir {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut files = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("chunk_") && name.ends_with(".clmx") {
                files.push(path);
            }
        }
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no chunk_*.clmx files in {}",
                dir.display()
            )));
        }
        files.sort();
        Ok(Self {
            files: files.into_iter(),
        })
    }
}

impl Iterator for ChunkDir {
    type Item = Result<DenseMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        self.files.next().map(crate::io::read_clmx)
    }
}

/// Opens either a chunk directory or a single CLMX file split every
/// `chunk_rows` rows.
pub fn open_source(path: impl AsRef<Path>, chunk_rows: usize) -> Result<Box<dyn ChunkSource>> {
    let path = path.as_ref();
    if path.is_dir() {
        Ok(Box::new(ChunkDir::open(path)?))
    } else {
        Ok(Box::new(ClmxRowBlocks::open(path, chunk_rows)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsqrStrategy {
    Sequential,
    Tree,
}

impl std::str::FromStr for TsqrStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(TsqrStrategy::Sequential),
            "tree" => Ok(TsqrStrategy::Tree),
            other => Err(Error::InvalidArgument(format!(
                "unknown TSQR strategy `{other}` (expected sequential or tree)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TsqrPlan {
    pub strategy: TsqrStrategy,
    pub chunk_rows: usize,
    pub workers: usize,
}

impl Default for TsqrPlan {
    fn default() -> Self {
        Self {
            strategy: TsqrStrategy::Sequential,
            chunk_rows: DEFAULT_CHUNK_ROWS,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl TsqrPlan {
    pub fn new(strategy: TsqrStrategy, chunk_rows: usize, workers: usize) -> Result<Self> {
        if chunk_rows == 0 || workers == 0 {
            return Err(Error::InvalidArgument(
                "chunk_rows and workers must be >= 1".into(),
            ));
        }
        Ok(Self {
            strategy,
            chunk_rows,
            workers,
        })
    }
}

/// Bookkeeping from one TSQR run. Scalar counts cover the matrix buffers the
/// run holds: the chunk just read, the stacked QR buffer, the running R and
/// the QR scratch space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TsqrStats {
    pub chunks: usize,
    pub total_rows: usize,
    pub peak_scalars: usize,
}

#[derive(Default)]
struct WorkspaceMeter {
    live: usize,
    peak: usize,
}

impl WorkspaceMeter {
    fn acquire(&mut self, scalars: usize) {
        self.live += scalars;
        self.peak = self.peak.max(self.live);
    }

    fn release(&mut self, scalars: usize) {
        self.live -= scalars;
    }
}

struct Validated {
    n: usize,
    precision: Precision,
}

fn check_chunk(chunk: &DenseMatrix, index: usize, first: &mut Option<Validated>) -> Result<()> {
    match first {
        None => {
            *first = Some(Validated {
                n: chunk.cols(),
                precision: chunk.precision(),
            })
        }
        Some(v) if v.n != chunk.cols() => {
            return Err(Error::Dimension(format!(
                "chunk {index} has {} columns, expected {}",
                chunk.cols(),
                v.n
            )))
        }
        Some(v) if v.precision != chunk.precision() => {
            return Err(Error::InvalidArgument(format!(
                "chunk {index} is {}, expected {}",
                chunk.precision(),
                v.precision
            )))
        }
        Some(_) => {}
    }
    Ok(())
}

fn empty_source() -> Error {
    Error::InvalidArgument("chunk source is empty".into())
}

/// Running R of the sequential chain in a fixed precision.
struct Chain<T: Real> {
    r: Option<Mat<T>>,
}

impl<T: Real> Chain<T> {
    fn absorb(&mut self, chunk: DenseMatrix, meter: &mut WorkspaceMeter) {
        let (k, n) = chunk.shape();
        let held = self.r.as_ref().map_or(0, |_| n);
        let rows = held + k;
        // Stack [R; X_i^T] into one buffer, then let the chunk go before the QR.
        meter.acquire(rows * n);
        let mut buf = Mat::<T>::zeros(rows, n);
        if let Some(r) = &self.r {
            buf.as_mut().submatrix_mut(0, 0, n, n).copy_from(r);
        }
        linalg::copy_into(buf.as_mut().submatrix_mut(held, 0, k, n), &chunk);
        drop(chunk);
        meter.release(k * n);

        let scratch = linalg::qr_workspace_scalars::<T>(rows, n);
        meter.acquire(scratch);
        linalg::qr_r_in_place(buf.as_mut(), Par::Seq);
        meter.release(scratch);

        meter.acquire(n * n);
        if self.r.is_some() {
            meter.release(n * n);
        }
        self.r = Some(linalg::extract_r(buf.as_ref()));
        drop(buf);
        meter.release(rows * n);
    }
}

fn sequential_imp<T: Real>(
    first: DenseMatrix,
    source: &mut dyn ChunkSource,
    stats: &mut TsqrStats,
    meter: &mut WorkspaceMeter,
    seen: &mut Option<Validated>,
) -> Result<Mat<T>> {
    let mut chain = Chain::<T> { r: None };
    chain.absorb(first, meter);
    while let Some(chunk) = source.next_chunk() {
        let chunk = chunk?;
        check_chunk(&chunk, stats.chunks, seen)?;
        stats.chunks += 1;
        stats.total_rows += chunk.rows();
        meter.acquire(chunk.rows() * chunk.cols());
        chain.absorb(chunk, meter);
    }
    Ok(chain.r.expect("at least one chunk absorbed"))
}

/// Sequential chain with bookkeeping. Single-threaded; holds one chunk and
/// one `n x n` R at a time, so memory does not grow with the number of rows.
pub fn tsqr_sequential_with_stats(
    source: &mut dyn ChunkSource,
) -> Result<(RFactor, TsqrStats)> {
    let mut stats = TsqrStats::default();
    let mut meter = WorkspaceMeter::default();
    let mut seen = None;
    let first = source.next_chunk().ok_or_else(empty_source)??;
    check_chunk(&first, 0, &mut seen)?;
    stats.chunks = 1;
    stats.total_rows = first.rows();
    meter.acquire(first.rows() * first.cols());
    let n = first.cols();
    let r = match first.precision() {
        Precision::Single => {
            let r = sequential_imp::<f32>(first, source, &mut stats, &mut meter, &mut seen)?;
            linalg::from_mat(r.as_ref())?
        }
        Precision::Double => {
            let r = sequential_imp::<f64>(first, source, &mut stats, &mut meter, &mut seen)?;
            linalg::from_mat(r.as_ref())?
        }
    };
    stats.peak_scalars = meter.peak;
    Ok((RFactor::from_parts(r, stats.total_rows < n)?, stats))
}

/// R factor of the concatenation of all chunks, folding each chunk into the
/// running R in order.
pub fn tsqr_sequential(source: &mut dyn ChunkSource) -> Result<RFactor> {
    tsqr_sequential_with_stats(source).map(|(r, _)| r)
}

fn leaf_r<T: Real>(chunk: &DenseMatrix) -> Mat<T> {
    let mut buf = linalg::to_mat::<T>(chunk);
    linalg::qr_r_in_place(buf.as_mut(), Par::Seq);
    linalg::extract_r(buf.as_ref())
}

fn tree_imp<T: Real>(
    first: DenseMatrix,
    source: &mut dyn ChunkSource,
    batch: usize,
    pool: &rayon::ThreadPool,
) -> Result<(Mat<T>, usize)> {
    let mut seen = None;
    check_chunk(&first, 0, &mut seen)?;
    let mut index = 1;
    let mut total_rows = first.rows();
    let mut pending = vec![first];
    let mut leaves: Vec<Mat<T>> = Vec::new();
    loop {
        let next = source.next_chunk();
        let exhausted = next.is_none();
        if let Some(chunk) = next {
            let chunk = chunk?;
            check_chunk(&chunk, index, &mut seen)?;
            index += 1;
            total_rows += chunk.rows();
            pending.push(chunk);
        }
        if pending.len() >= batch || (exhausted && !pending.is_empty()) {
            let done: Vec<Mat<T>> = pool.install(|| pending.par_iter().map(leaf_r::<T>).collect());
            leaves.extend(done);
            pending.clear();
        }
        if exhausted {
            break;
        }
    }
    let mut level = leaves;
    while level.len() > 1 {
        level = pool.install(|| {
            level
                .par_chunks(2)
                .map(|pair| match pair {
                    [a, b] => linalg::stacked_r_factor(a.as_ref(), b.as_ref(), Par::Seq),
                    [lone] => lone.clone(),
                    _ => unreachable!("par_chunks(2) yields one or two nodes"),
                })
                .collect()
        });
    }
    Ok((level.pop().expect("at least one leaf"), total_rows))
}

/// Leaf QR per chunk, then pairwise combination up a binary tree whose shape is
/// fixed by chunk index (left to right, a lone node is promoted unchanged).
/// Leaves and same-level combines run on `plan.workers` threads; chunks are
/// read in batches of `plan.workers` so only the leaf R factors accumulate.
pub fn tsqr_tree(source: &mut dyn ChunkSource, plan: &TsqrPlan) -> Result<RFactor> {
    let first = source.next_chunk().ok_or_else(empty_source)??;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start TSQR workers: {e}")))?;
    let n = first.cols();
    let (r, total_rows) = match first.precision() {
        Precision::Single => {
            let (r, rows) = tree_imp::<f32>(first, source, plan.workers.max(1), &pool)?;
            (linalg::from_mat(r.as_ref())?, rows)
        }
        Precision::Double => {
            let (r, rows) = tree_imp::<f64>(first, source, plan.workers.max(1), &pool)?;
            (linalg::from_mat(r.as_ref())?, rows)
        }
    };
    RFactor::from_parts(r, total_rows < n)
}

/// Runs the strategy selected by `plan`.
pub fn tsqr(source: &mut dyn ChunkSource, plan: &TsqrPlan) -> Result<RFactor> {
    match plan.strategy {
        TsqrStrategy::Sequential => tsqr_sequential(source),
        TsqrStrategy::Tree => tsqr_tree(source, plan),
    }
}

fn augment_imp<T: Real>(r: &DenseMatrix, mu: f64) -> Result<DenseMatrix> {
    let n = r.rows();
    let top = linalg::to_mat::<T>(r);
    let s = T::from_f64(mu.sqrt());
    let bottom = Mat::<T>::from_fn(n, n, |i, j| if i == j { s } else { T::zero() });
    let out = linalg::stacked_r_factor(top.as_ref(), bottom.as_ref(), Par::Seq);
    linalg::from_mat(out.as_ref())
}

/// `R'` with `R'^T R' = R^T R + mu I`, from a QR of the `2n x n` stack
/// `[R; sqrt(mu) I]`. `mu = 0` returns the input unchanged.
pub fn augment_with_regularizer(r: &RFactor, mu: f64) -> Result<RFactor> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "regularization weight mu must be finite and >= 0, got {mu}"
        )));
    }
    if mu == 0.0 {
        return Ok(r.clone());
    }
    let out = match r.precision() {
        Precision::Single => augment_imp::<f32>(r.matrix(), mu)?,
        Precision::Double => augment_imp::<f64>(r.matrix(), mu)?,
    };
    RFactor::from_parts(out, false)
}
