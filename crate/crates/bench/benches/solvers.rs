use coala_bench::instance;
use coala_core::{solve, SolverMethod};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for &(n, k) in &[(64, 512), (128, 2048)] {
        let inst = instance(n, n, k, n / 8, 1e4);
        for method in [
            SolverMethod::CoalaQr,
            SolverMethod::CoalaDirect,
            SolverMethod::GramCholesky,
            SolverMethod::GramSvd,
            SolverMethod::Reference,
        ] {
            group.bench_with_input(BenchmarkId::new(method.to_string(), format!("{n}x{k}")), &inst, |b, inst| {
                b.iter(|| solve(inst, method).expect("solve succeeds"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, solvers);
criterion_main!(benches);
