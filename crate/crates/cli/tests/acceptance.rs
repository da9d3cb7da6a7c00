//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary so the lines come out in order.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use coala_core::analysis::{
    convergence_study, gap_study, gaussian, gram_loss_example, logspace, rng, stability_study,
    with_spectrum, ConvergenceOptions, Fixture, GapTemplate, GaussianChunks,
};
use coala_core::io::{read_clmx, write_clmx};
use coala_core::oracle::{brute_force_rank_one, oracle_corda_closed_form, oracle_manton};
use coala_core::tsqr::{tsqr_sequential_with_stats, MemoryChunks, RFactor};
use coala_core::*;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> std::result::Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn rel_dist(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let d: f64 = a
        .to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    d.sqrt() / b.frobenius_norm()
}

fn mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.matmul_f64(b).expect("shapes agree")
}

fn plus_mu(g: &DenseMatrix, mu: f64) -> DenseMatrix {
    DenseMatrix::from_fn(g.rows(), g.cols(), Precision::Double, |i, j| {
        g.get(i, j) + if i == j { mu } else { 0.0 }
    })
    .unwrap()
}

fn optimality() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut solved = 0;
    let mut seed = 0u64;
    while solved < 50 {
        seed += 1;
        let m = 4 + (seed * 13 % 61) as usize;
        let n = 4 + (seed * 29 % 61) as usize;
        let k = 4 + (seed * 7 % 61) as usize;
        let r = 1 + (seed as usize % 8).min(m.min(n).min(k) - 2);
        let w = gaussian(m, n, &mut rng(seed));
        let x = gaussian(n, k, &mut rng(seed + 1000));
        let spectrum = SpectralSummary::of(&mul(&w, &x)).map_err(|e| e.to_string())?;
        if spectrum.gap_at(r) <= 1e-6 * spectrum.sigma(1) {
            continue;
        }
        let inst = ProblemInstance::new(w.clone(), x.clone(), r).map_err(|e| e.to_string())?;
        let s = solve_coala(&inst).map_err(|e| e.to_string())?;
        let f = objective_value(&w, &s.factors, &x).map_err(|e| e.to_string())?;
        let tail = spectrum.tail_energy(r);
        worst = worst.max((f - tail).abs() / tail);
        solved += 1;
    }
    ensure(worst <= 1e-8, || format!("worst relative gap {worst:e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("50 instances, worst relative gap {worst:.2e}, {:.2}s", start.elapsed().as_secs_f64()))
}

fn cross_formula() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut g = rng(seed);
        let w = with_spectrum(12, 10, &logspace(0.0, -1.0, 10), &mut g).map_err(|e| e.to_string())?;
        let x = coala_core::analysis::conditioned_data(10, 40, 1e2, &mut g).map_err(|e| e.to_string())?;
        let inst = ProblemInstance::new(w.clone(), x.clone(), 3).map_err(|e| e.to_string())?;
        let coala = mul(&solve_coala(&inst).map_err(|e| e.to_string())?.approximation(), &x);
        let reference = mul(&solve_reference(&inst).map_err(|e| e.to_string())?.approximation(), &x);
        let manton = mul(&oracle_manton(&w, &x, 3).map_err(|e| e.to_string())?, &x);
        for (a, b) in [(&coala, &reference), (&coala, &manton), (&reference, &manton)] {
            worst = worst.max(rel_dist(a, b));
        }
    }
    ensure(worst <= 1e-8, || format!("pairwise W'X disagreement {worst:e}"))?;

    let w = gaussian(3, 3, &mut rng(77));
    let x = gaussian(3, 3, &mut rng(78));
    let inst = ProblemInstance::new(w.clone(), x.clone(), 1).map_err(|e| e.to_string())?;
    let s = solve_coala(&inst).map_err(|e| e.to_string())?;
    let solved = objective_value(&w, &s.factors, &x).map_err(|e| e.to_string())?;
    let best = brute_force_rank_one(&w, &x, Some(&s.approximation()), 100_000, 79)
        .map_err(|e| e.to_string())?;
    ensure(best >= solved - 1e-9, || format!("brute force {best} beats solver {solved}"))?;
    Ok(format!("worst pairwise {worst:.2e}; brute force {best:.6} vs solver {solved:.6}"))
}

fn gram_identity() -> Check {
    let samples = gaussian(600, 24, &mut rng(5));
    let x = samples.transpose();
    let target = mul(&x, &samples);
    let check = |name: &str, r: &RFactor, target: &DenseMatrix| -> std::result::Result<f64, String> {
        let e = rel_dist(&r.gram(), target);
        ensure(e <= 1e-10, || format!("{name}: {e:e}")).map(|()| e)
    };
    let qr = qr_reduce(&x).map_err(|e| e.to_string())?;
    let mut worst = check("qr_reduce", &qr, &target)?;
    let aug = augment_with_regularizer(&qr, 0.3).map_err(|e| e.to_string())?;
    worst = worst.max(check("augment_with_regularizer", &aug, &plus_mu(&target, 0.3))?);
    let partitions = [1, 7, 50, 128, 333, 600];
    for rows in partitions {
        let seq = tsqr_sequential(&mut MemoryChunks::new(&samples, rows).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        worst = worst.max(check(&format!("tsqr_sequential/{rows}"), &seq, &target)?);
        for workers in [1, 3] {
            let plan = TsqrPlan::new(TsqrStrategy::Tree, rows, workers).map_err(|e| e.to_string())?;
            let tree = tsqr_tree(&mut MemoryChunks::new(&samples, rows).map_err(|e| e.to_string())?, &plan)
                .map_err(|e| e.to_string())?;
            worst = worst.max(check(&format!("tsqr_tree/{rows}/{workers}"), &tree, &target)?);
            worst = worst.max(check(&format!("tree vs sequential/{rows}/{workers}"), &tree, &seq.gram())?);
        }
    }
    Ok(format!("{} partitions, worst {worst:.2e}", partitions.len()))
}

fn gram_loss() -> Check {
    let start = Instant::now();
    let loss = gram_loss_example().map_err(|e| e.to_string())?;
    let again = gram_loss_example().map_err(|e| e.to_string())?;
    ensure(
        loss.sigma2_gram.to_bits() == again.sigma2_gram.to_bits()
            && loss.sigma2_qr.to_bits() == again.sigma2_qr.to_bits(),
        || "not deterministic".into(),
    )?;
    ensure(loss.gram_error() >= 1e-4, || format!("gram error {:e}", loss.gram_error()))?;
    ensure(loss.qr_error() <= 1e-6, || format!("qr error {:e}", loss.qr_error()))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!(
        "sigma2 {:.4e}: gram error {:.3e}, qr error {:.3e}",
        loss.sigma2_exact,
        loss.gram_error(),
        loss.qr_error()
    ))
}

fn convergence() -> Check {
    let start = Instant::now();
    let grid = logspace(-1.0, -6.0, 6);
    let mut slopes = (f64::INFINITY, f64::NEG_INFINITY);
    let mut runs = 0;
    for fixture in [Fixture::FullRank, Fixture::RankDeficient] {
        for seed in 0..20 {
            let (w, x) = fixture.build(seed).map_err(|e| e.to_string())?;
            let opts = ConvergenceOptions {
                bound_scale: 1.0,
                seed,
            };
            let report = convergence_study(&w, &x, fixture.rank(), &grid, &opts).map_err(|e| e.to_string())?;
            let violations = report.bound_violations();
            ensure(violations == 0, || {
                format!("{} seed {seed}: {violations} bound violations", fixture.name())
            })?;
            let slope = report.summary["slope"];
            ensure((0.9..=1.1).contains(&slope), || {
                format!("{} seed {seed}: slope {slope}", fixture.name())
            })?;
            slopes = (slopes.0.min(slope), slopes.1.max(slope));
            runs += 1;
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!("{runs} instances, slopes in [{:.4}, {:.4}]", slopes.0, slopes.1))
}

fn gap_dependence() -> Check {
    let grid: Vec<f64> = (1..=10).map(|i| 0.5f64.powi(i)).collect();
    let report = gap_study(&GapTemplate::standard(10, 8, 3, 1), &grid, 3, 1e-8).map_err(|e| e.to_string())?;
    let ratios = report.numbers("halving_ratio");
    let asymptotic = &ratios[ratios.len() / 2..];
    ensure(asymptotic.iter().all(|r| (1.6..=2.4).contains(r)), || {
        format!("ratios {asymptotic:?}")
    })?;
    let (lo, hi) = asymptotic
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    Ok(format!("halving ratios in [{lo:.3}, {hi:.3}], exponent {:.3}", report.summary["exponent"]))
}

fn stability() -> Check {
    let (w, x) = Fixture::IllConditioned.build(42).map_err(|e| e.to_string())?;
    let ranks = [1, 2, 4, 8];
    let report = stability_study(&w, &x, &ranks, Precision::Single, 42).map_err(|e| e.to_string())?;
    let methods: Vec<String> = report.column("method").unwrap().iter().map(|f| f.to_string()).collect();
    let rank_col = report.numbers("rank");
    let errors = report.numbers("rel_error");
    let mut worst_coala = 0.0f64;
    for &r in &ranks {
        let at = |name: &str| {
            methods
                .iter()
                .zip(&rank_col)
                .zip(&errors)
                .find(|((m, rr), _)| m.as_str() == name && **rr == r as f64)
                .map(|(_, e)| *e)
        };
        let coala = at("coala-qr").ok_or("missing coala row")?;
        worst_coala = worst_coala.max(coala);
        ensure(coala <= 1e-3, || format!("coala error {coala:e} at rank {r}"))?;
        let baselines = [at("gram-cholesky"), at("gram-svd")];
        ensure(
            baselines.iter().any(|e| e.is_none_or(|e| e.is_nan() || e > 1e-1)),
            || format!("no Gram baseline degraded at rank {r}: {baselines:?}"),
        )?;
    }
    Ok(format!("coala worst {worst_coala:.2e}; a Gram baseline exceeds 1e-1 or fails at every rank"))
}

fn alpha_family() -> Check {
    let mut g = rng(8);
    let w = with_spectrum(10, 8, &logspace(0.0, -1.0, 8), &mut g).map_err(|e| e.to_string())?;
    let x = coala_core::analysis::conditioned_data(8, 30, 1e2, &mut g).map_err(|e| e.to_string())?;
    let inst = ProblemInstance::new(w.clone(), x.clone(), 3).map_err(|e| e.to_string())?;

    let a0 = solve_alpha(&inst.clone().with_alpha(0)).map_err(|e| e.to_string())?;
    let (best, _) = coala_core::oracle::oracle_best_rank_r(&w, 3).map_err(|e| e.to_string())?;
    let e0 = rel_dist(&a0.approximation(), &best);
    ensure(e0 <= 1e-10, || format!("alpha 0 vs truncated SVD {e0:e}"))?;

    let a1 = solve_alpha(&inst.clone().with_alpha(1)).map_err(|e| e.to_string())?;
    let coala = solve_coala(&inst).map_err(|e| e.to_string())?;
    let d1 = subspace_distance(a1.factors.a(), coala.factors.a()).map_err(|e| e.to_string())?;
    ensure(d1 <= 1e-8, || format!("alpha 1 projector distance {d1:e}"))?;

    let a2 = solve_alpha(&inst.clone().with_alpha(2)).map_err(|e| e.to_string())?;
    let closed = oracle_corda_closed_form(&w, &x, 3).map_err(|e| e.to_string())?;
    let e2 = rel_dist(&mul(&a2.approximation(), &x), &mul(&closed, &x));
    ensure(e2 <= 1e-6, || format!("alpha 2 vs closed form {e2:e}"))?;

    let singular = with_spectrum(8, 30, &[1.0, 0.5, 0.3, 0.2, 0.1, 1e-13, 1e-14, 1e-15], &mut g)
        .map_err(|e| e.to_string())?;
    ensure(oracle_corda_closed_form(&w, &singular, 3).is_err(), || {
        "closed form accepted singular data".into()
    })?;
    let inst = ProblemInstance::new(w, singular, 3).map_err(|e| e.to_string())?;
    solve_alpha(&inst.with_alpha(2)).map_err(|e| format!("alpha 2 on singular data: {e}"))?;
    Ok(format!("alpha0 {e0:.1e}, alpha1 {d1:.1e}, alpha2 {e2:.1e}, singular data ok"))
}

fn out_of_core() -> Check {
    let (n, total, chunk) = (512, 200_000, 8192);
    let seed = 9;
    let mut source = GaussianChunks::new(n, total, chunk, seed).map_err(|e| e.to_string())?;
    let (streamed, stats) = tsqr_sequential_with_stats(&mut source).map_err(|e| e.to_string())?;
    let bound = 3 * (n * n + chunk * n);
    ensure(stats.peak_scalars <= bound, || {
        format!("peak {} scalars over bound {bound}", stats.peak_scalars)
    })?;
    ensure(stats.total_rows == total, || format!("saw {} rows", stats.total_rows))?;

    let chunks = GaussianChunks::new(n, total, chunk, seed)
        .map_err(|e| e.to_string())?
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let samples = DenseMatrix::vstack(&chunks).map_err(|e| e.to_string())?;
    drop(chunks);
    let in_memory = RFactor::from_samples(&samples).map_err(|e| e.to_string())?;
    drop(samples);
    let e = rel_dist(&streamed.gram(), &in_memory.gram());
    ensure(e <= 1e-10, || format!("Gram mismatch {e:e}"))?;
    Ok(format!("peak {} of {bound} scalars, Gram mismatch {e:.2e}", stats.peak_scalars))
}

fn run_cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_coala"))
        .args(args)
        .env_remove("COALA_SEED")
        .output()
        .expect("coala binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn cli_contract() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_owned();

    for precision in [Precision::Double, Precision::Single] {
        let m = gaussian(7, 5, &mut rng(3)).to_precision(precision).map_err(|e| e.to_string())?;
        let file = dir.join(format!("round_{precision}.clmx"));
        write_clmx(&file, &m).map_err(|e| e.to_string())?;
        let back = read_clmx(&file).map_err(|e| e.to_string())?;
        ensure(back.bitwise_eq(&m), || format!("{precision} round trip differs"))?;
        let copy = dir.join(format!("copy_{precision}.clmx"));
        write_clmx(&copy, &back).map_err(|e| e.to_string())?;
        ensure(fs::read(&file).ok() == fs::read(&copy).ok(), || "rewritten bytes differ".into())?;
    }

    let data = dir.join("data");
    let gl = dir.join("gl");
    let mut codes = Vec::new();
    let mut expect = |label: &str, args: Vec<String>, code: i32| -> std::result::Result<(), String> {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let got = run_cli(&args);
        codes.push(got);
        ensure(got == code, || format!("{label}: exit {got}, expected {code}"))
    };
    let v = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    expect("fixture", v(&["fixture", "--name", "full-rank", "--out", &s(&data)]), 0)?;
    expect("gram-loss fixture", v(&["fixture", "--name", "gram-loss", "--precision", "f32", "--out", &s(&gl)]), 0)?;
    let factorize = |d: &Path, rank: &str, method: &str, out: &str| {
        v(&[
            "factorize",
            "--weights",
            &s(&d.join("weights.clmx")),
            "--activations",
            &s(&d.join("activations.clmx")),
            "--rank",
            rank,
            "--method",
            method,
            "--out",
            &s(&dir.join(out)),
        ])
    };
    expect("factorize", factorize(&data, "3", "coala", "ok"), 0)?;
    expect("rank 0", factorize(&data, "0", "coala", "bad"), 2)?;
    expect("gram-cholesky on gram-loss", factorize(&gl, "1", "gram-cholesky", "chol"), 3)?;
    expect("coala on gram-loss", factorize(&gl, "1", "coala", "gl_ok"), 0)?;
    expect("convergence", v(&["study", "--kind", "convergence", "--out", &s(&dir.join("conv"))]), 0)?;
    expect(
        "falsified bound",
        v(&["study", "--kind", "convergence", "--bound-scale", "1e-6", "--out", &s(&dir.join("neg"))]),
        4,
    )?;
    expect(
        "malformed grid",
        v(&["study", "--kind", "convergence", "--mu-grid", "1e-2,banana", "--out", &s(&dir.join("x"))]),
        2,
    )?;
    Ok(format!("CLMX round trip bitwise; exit codes {codes:?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("optimality", optimality),
        ("cross-formula agreement", cross_formula),
        ("gram identity", gram_identity),
        ("gram loss example", gram_loss),
        ("convergence bounds", convergence),
        ("gap dependence", gap_dependence),
        ("stability separation", stability),
        ("alpha family", alpha_family),
        ("out-of-core contract", out_of_core),
        ("cli contract", cli_contract),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(reason) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
