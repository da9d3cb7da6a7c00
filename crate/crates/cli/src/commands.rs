use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use coala_core::analysis::{self, ConvergenceOptions, Fixture, GapTemplate, StudyReport, TimingStrategy};
use coala_core::io::{read_matrix, write_clmx};
use coala_core::tsqr::{self, open_source, RFactor};
use coala_core::wlra::{solve_coala_from_r, PathTaken, Solution};
use coala_core::{
    augment_with_regularizer, objective_value, DenseMatrix, Error, Precision, ProblemInstance,
    SolverMethod, TsqrPlan,
};

use crate::{FactorizeArgs, FixtureArgs, KindArg, MethodArg, StudyArgs, TsqrArgs};

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_BOUND_VIOLATION: u8 = 4;

/// Version of the status.json layout.
pub const STATUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Invalid(String),
    BoundViolation { violations: usize, csv: String },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            Failure::Core(_) | Failure::Invalid(_) => EXIT_INVALID,
            Failure::BoundViolation { .. } => EXIT_BOUND_VIOLATION,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Invalid(msg) => f.write_str(msg),
            Failure::BoundViolation { violations, csv } => write!(
                f,
                "{violations} measured errors exceed their convergence bound (see {csv})"
            ),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize)]
struct Status {
    schema_version: u32,
    method: String,
    path_taken: PathTaken,
    precision: Precision,
    objective: f64,
    mu: f64,
    alpha: u32,
    rank: usize,
    degenerate: bool,
    gap_degenerate: bool,
    short_data: bool,
    elapsed_seconds: f64,
}

fn check_rank(rank: usize, m: usize, n: usize) -> Outcome {
    let max = m.min(n);
    if rank == 0 || rank > max {
        return Err(Failure::Invalid(format!(
            "--rank {rank} is invalid: must lie in 1..={max} for a {m}x{n} weight matrix"
        )));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn method_of(args: &FactorizeArgs) -> Result<SolverMethod, Failure> {
    if args.method != MethodArg::Coala && (args.mu != 0.0 || args.alpha != 1) {
        return Err(Failure::Invalid(
            "--mu and --alpha apply to --method coala only".into(),
        ));
    }
    if args.mu != 0.0 && args.alpha != 1 {
        return Err(Failure::Invalid(
            "--mu and --alpha cannot be combined".into(),
        ));
    }
    Ok(match args.method {
        MethodArg::Coala if args.alpha != 1 => SolverMethod::Alpha(args.alpha),
        MethodArg::Coala => SolverMethod::CoalaQr,
        MethodArg::CoalaDirect => SolverMethod::CoalaDirect,
        MethodArg::GramCholesky => SolverMethod::GramCholesky,
        MethodArg::GramSvd => SolverMethod::GramSvd,
        MethodArg::Reference => SolverMethod::Reference,
    })
}

pub fn factorize(args: &FactorizeArgs) -> Outcome {
    let method = method_of(args)?;
    let weights = read_matrix(&args.weights)?;
    let precision = args.precision.map_or(weights.precision(), Precision::from);
    let w = weights.to_precision(precision)?;
    check_rank(args.rank, w.rows(), w.cols())?;

    let (solution, objective, short_data) = if args.activations.is_dir() {
        if method != SolverMethod::CoalaQr {
            return Err(Failure::Invalid(format!(
                "chunked activations only support --method coala, got {method}"
            )));
        }
        let plan = TsqrPlan::new(args.strategy.into(), args.chunk_rows, 1)?;
        let mut source = open_source(&args.activations, args.chunk_rows)?;
        let r = tsqr::tsqr(source.as_mut(), &plan)?;
        let r = RFactor::from_parts(r.matrix().to_precision(precision)?, r.short_data())?;
        let short = r.short_data();
        let augmented = augment_with_regularizer(&r, args.mu)?;
        let solution = solve_coala_from_r(&w, &augmented, args.rank)?;
        // ||(W - W')X||_F = ||(W - W')R^T||_F for the unaugmented R.
        let objective = objective_value(&w, &solution.factors, &r.matrix().transpose())?;
        (solution, objective, short)
    } else {
        let x = read_matrix(&args.activations)?.transpose().to_precision(precision)?;
        let instance = ProblemInstance::new(w.clone(), x.clone(), args.rank)?
            .with_mu(args.mu)?
            .with_alpha(args.alpha);
        let solution: Solution = coala_core::solve(&instance, method)?;
        let objective = objective_value(&w, &solution.factors, &x)?;
        (solution, objective, x.cols() < x.rows())
    };

    fs::create_dir_all(&args.out)?;
    write_clmx(args.out.join("A.clmx"), solution.factors.a())?;
    write_clmx(args.out.join("B.clmx"), solution.factors.b())?;
    let status = Status {
        schema_version: STATUS_SCHEMA_VERSION,
        method: solution.status.method.to_string(),
        path_taken: solution.status.path_taken,
        precision: solution.status.precision,
        objective,
        mu: args.mu,
        alpha: args.alpha,
        rank: args.rank,
        degenerate: solution.status.degenerate,
        gap_degenerate: solution.status.gap_degenerate,
        short_data,
        elapsed_seconds: solution.status.elapsed_seconds,
    };
    write_json(&args.out.join("status.json"), &status)
}

pub fn tsqr(args: &TsqrArgs) -> Outcome {
    let plan = TsqrPlan::new(args.strategy.into(), args.chunk_rows, args.workers)?;
    let mut source = open_source(&args.activations, args.chunk_rows)?;
    let r = tsqr::tsqr(source.as_mut(), &plan)?;
    let r = augment_with_regularizer(&r, args.mu)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_clmx(&args.out, r.matrix())?;
    Ok(())
}

fn study_instance(args: &StudyArgs, default: Fixture) -> Result<(DenseMatrix, DenseMatrix, usize), Failure> {
    let fixture = args.fixture.map_or(default, Fixture::from);
    let (w, x) = match (&args.weights, &args.activations) {
        (Some(w), Some(a)) => (read_matrix(w)?, read_matrix(a)?.transpose()),
        _ => fixture.build(args.seed)?,
    };
    let rank = args.rank.unwrap_or(fixture.rank());
    check_rank(rank, w.rows(), w.cols())?;
    Ok((w, x, rank))
}

fn run_study(args: &StudyArgs) -> Result<StudyReport, Failure> {
    match args.kind {
        KindArg::Convergence => {
            let (w, x, rank) = study_instance(args, Fixture::FullRank)?;
            let grid = args
                .mu_grid
                .clone()
                .unwrap_or_else(|| analysis::logspace(-1.0, -6.0, 6));
            let options = ConvergenceOptions {
                bound_scale: args.bound_scale,
                seed: args.seed,
            };
            Ok(analysis::convergence_study(&w, &x, rank, &grid, &options)?)
        }
        KindArg::Gap => {
            let rank = args.rank.unwrap_or(3);
            let template = GapTemplate::standard(10, 8, rank, args.seed);
            let grid = args
                .gap_grid
                .clone()
                .unwrap_or_else(|| (1..=10).map(|i| 0.5f64.powi(i)).collect());
            Ok(analysis::gap_study(&template, &grid, rank, args.mu)?)
        }
        KindArg::Stability => {
            let (w, x, _) = study_instance(args, Fixture::IllConditioned)?;
            let ranks = args.rank_grid.clone().unwrap_or_else(|| vec![1, 2, 4, 8]);
            for &r in &ranks {
                check_rank(r, w.rows(), w.cols())?;
            }
            let precision = args.precision.map_or(Precision::Single, Precision::from);
            Ok(analysis::stability_study(&w, &x, &ranks, precision, args.seed)?)
        }
        KindArg::Timing => {
            let shapes = args
                .shapes
                .clone()
                .unwrap_or_else(|| vec![(64, 4096), (256, 16384)]);
            let strategies = [
                TimingStrategy::InMemoryQr,
                TimingStrategy::Sequential,
                TimingStrategy::Tree,
                TimingStrategy::GramEigen,
            ];
            Ok(analysis::timing_study(
                &shapes,
                &strategies,
                args.chunk_rows,
                args.repeats,
                args.seed,
            )?)
        }
    }
}

pub fn study(args: &StudyArgs) -> Outcome {
    let report = run_study(args)?;
    fs::create_dir_all(&args.out)?;
    let stem = report.kind.to_string();
    let csv = args.out.join(format!("{stem}.csv"));
    report.write_csv(&csv)?;
    report.write_json(args.out.join(format!("{stem}.json")))?;
    match report.bound_violations() {
        0 => Ok(()),
        violations => Err(Failure::BoundViolation {
            violations,
            csv: csv.display().to_string(),
        }),
    }
}

#[derive(Serialize)]
struct FixtureInfo {
    name: &'static str,
    seed: u64,
    m: usize,
    n: usize,
    k: usize,
    rank: usize,
    precision: Precision,
}

pub fn fixture(args: &FixtureArgs) -> Outcome {
    let fixture = Fixture::from(args.name);
    let (w, x) = fixture.build(args.seed)?;
    let precision = args.precision.map_or(w.precision(), Precision::from);
    let w = w.to_precision(precision)?;
    let samples = x.transpose().to_precision(precision)?;
    fs::create_dir_all(&args.out)?;
    write_clmx(args.out.join("weights.clmx"), &w)?;
    write_clmx(args.out.join("activations.clmx"), &samples)?;
    if let Some(rows) = args.chunk_rows {
        let dir = args.out.join("chunks");
        fs::create_dir_all(&dir)?;
        for (i, chunk) in tsqr::MemoryChunks::new(&samples, rows)?.enumerate() {
            write_clmx(dir.join(format!("chunk_{i:05}.clmx")), &chunk?)?;
        }
    }
    let info = FixtureInfo {
        name: fixture.name(),
        seed: args.seed,
        m: w.rows(),
        n: w.cols(),
        k: samples.rows(),
        rank: fixture.rank(),
        precision,
    };
    write_json(&args.out.join("fixture.json"), &info)
}
