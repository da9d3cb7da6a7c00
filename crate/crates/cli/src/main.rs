//! `coala`: factorize weights against calibration activations, compute R
//! factors out of core, and run the verification studies.
//!
//! Activation files are sample-major: one row per sample, one column per
//! feature (`k x n`, the transpose of the calibration matrix X).
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 bound
//! violation in a convergence study.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coala_core::analysis::Fixture;
use coala_core::tsqr::DEFAULT_CHUNK_ROWS;
use coala_core::{Precision, TsqrStrategy};

#[derive(Parser, Debug)]
#[command(name = "coala", version, about = "Inversion-free weighted low-rank approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank-r factors A, B minimising ||(W - AB) X||_F.
    Factorize(FactorizeArgs),
    /// R factor of the activations (R^T R = X X^T, plus mu I with --mu).
    Tsqr(TsqrArgs),
    /// Run a verification study and write CSV plus a JSON sidecar.
    Study(StudyArgs),
    /// Write a seeded synthetic instance.
    #[command(hide = true)]
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::Single,
            PrecisionArg::F64 => Precision::Double,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Coala,
    CoalaDirect,
    GramCholesky,
    GramSvd,
    Reference,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    Sequential,
    Tree,
}

impl From<StrategyArg> for TsqrStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Sequential => TsqrStrategy::Sequential,
            StrategyArg::Tree => TsqrStrategy::Tree,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Convergence,
    Gap,
    Stability,
    Timing,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FixtureArg {
    WellConditioned,
    FullRank,
    RankDeficient,
    IllConditioned,
    GramLoss,
}

impl From<FixtureArg> for Fixture {
    fn from(f: FixtureArg) -> Self {
        match f {
            FixtureArg::WellConditioned => Fixture::WellConditioned,
            FixtureArg::FullRank => Fixture::FullRank,
            FixtureArg::RankDeficient => Fixture::RankDeficient,
            FixtureArg::IllConditioned => Fixture::IllConditioned,
            FixtureArg::GramLoss => Fixture::GramLoss,
        }
    }
}

#[derive(Args, Debug)]
pub struct FactorizeArgs {
    /// Weight matrix W (m x n), CLMX or CSV.
    #[arg(long)]
    weights: PathBuf,
    /// Activations (k x n): a CLMX/CSV file, or a directory of chunk_*.clmx files.
    #[arg(long)]
    activations: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1)]
    alpha: u32,
    #[arg(long, value_enum, default_value_t = MethodArg::Coala)]
    method: MethodArg,
    /// Working precision; defaults to the precision of the weights file.
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Rows per chunk when activations are a chunk directory.
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Sequential)]
    strategy: StrategyArg,
    /// Output directory for A.clmx, B.clmx and status.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TsqrArgs {
    /// Activations (k x n): a CLMX file or a directory of chunk_*.clmx files.
    #[arg(long)]
    activations: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Sequential)]
    strategy: StrategyArg,
    /// Worker threads for the tree strategy.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Output file for R.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Comma-separated, strictly decreasing regularization weights.
    #[arg(long, value_parser = parse_f64_list)]
    mu_grid: Option<Vec<f64>>,
    /// Comma-separated singular gaps.
    #[arg(long, value_parser = parse_f64_list)]
    gap_grid: Option<Vec<f64>>,
    /// Comma-separated ranks.
    #[arg(long, value_parser = parse_usize_list)]
    rank_grid: Option<Vec<usize>>,
    #[arg(long)]
    rank: Option<usize>,
    /// Fixed regularization weight of the gap study.
    #[arg(long, default_value_t = 1e-8)]
    mu: f64,
    #[arg(long, env = "COALA_SEED", default_value_t = coala_core::analysis::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Built-in instance for convergence and stability studies.
    #[arg(long, value_enum)]
    fixture: Option<FixtureArg>,
    /// Weights file, replacing the built-in instance.
    #[arg(long, requires = "activations")]
    weights: Option<PathBuf>,
    /// Activations file (k x n), replacing the built-in instance.
    #[arg(long, requires = "weights")]
    activations: Option<PathBuf>,
    /// Timing shapes as comma-separated `n:k` pairs.
    #[arg(long, value_parser = parse_shapes)]
    shapes: Option<Vec<(usize, usize)>>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
    /// Multiplies every convergence bound (values below 1 falsify them).
    #[arg(long, default_value_t = 1.0, hide = true)]
    bound_scale: f64,
    /// Output directory for <kind>.csv and <kind>.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    name: FixtureArg,
    #[arg(long, env = "COALA_SEED", default_value_t = coala_core::analysis::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Also split the activations into chunk_*.clmx files of this many rows.
    #[arg(long)]
    chunk_rows: Option<usize>,
    /// Output directory for weights.clmx, activations.clmx and fixture.json.
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|item| {
            let item = item.trim();
            item.parse::<T>()
                .map_err(|_| format!("`{item}` is not a valid number"))
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    let values: Vec<f64> = parse_list(s)?;
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(format!("`{v}` is not finite")),
        None => Ok(values),
    }
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    parse_list(s)
}

fn parse_shapes(s: &str) -> Result<Vec<(usize, usize)>, String> {
    s.split(',')
        .map(|pair| {
            let (n, k) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("shape `{pair}` is not of the form n:k"))?;
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| format!("`{v}` in shape `{pair}` is not a count"))
            };
            Ok((parse(n)?, parse(k)?))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Factorize(args) => commands::factorize(&args),
        Command::Tsqr(args) => commands::tsqr(&args),
        Command::Study(args) => commands::study(&args),
        Command::Fixture(args) => commands::fixture(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
