use coala_bench::samples;
use coala_core::tsqr::{tsqr, MemoryChunks, RFactor};
use coala_core::{TsqrPlan, TsqrStrategy};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn r_factor(c: &mut Criterion) {
    let mut group = c.benchmark_group("r_factor");
    group.sample_size(10);
    let (n, k, chunk) = (128, 32_768, 4096);
    let data = samples(n, k);
    group.bench_function(BenchmarkId::new("in-memory", n), |b| {
        b.iter(|| RFactor::from_samples(&data).expect("qr succeeds"))
    });
    for strategy in [TsqrStrategy::Sequential, TsqrStrategy::Tree] {
        let plan = TsqrPlan::new(strategy, chunk, 1).expect("valid plan");
        group.bench_function(BenchmarkId::new(format!("{strategy:?}").to_lowercase(), n), |b| {
            b.iter(|| {
                let mut source = MemoryChunks::new(&data, chunk).expect("valid chunking");
                tsqr(&mut source, &plan).expect("tsqr succeeds")
            })
        });
    }
    group.finish();
}

criterion_group!(benches, r_factor);
criterion_main!(benches);
