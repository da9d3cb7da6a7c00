mod common;

use coala_core::analysis::{random_orthonormal, rng};
use coala_core::oracle::oracle_best_rank_r;
use coala_core::tsqr::{tsqr_sequential_with_stats, MemoryChunks, RFactor};
use coala_core::*;
use proptest::prelude::*;

use common::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn basis(m: usize, r: usize, seed: u64) -> DenseMatrix {
    random_orthonormal(m, r, &mut rng(seed)).unwrap()
}

/// Splits the rows of `samples` at the given cut points.
fn split(samples: &DenseMatrix, cuts: &[usize]) -> Vec<Result<DenseMatrix>> {
    let mut bounds: Vec<usize> = cuts.iter().map(|c| c % samples.rows()).filter(|&c| c > 0).collect();
    bounds.push(0);
    bounds.push(samples.rows());
    bounds.sort_unstable();
    bounds.dedup();
    bounds
        .windows(2)
        .map(|w| samples.row_block(w[0], w[1] - w[0]))
        .collect()
}

fn objective(w: &DenseMatrix, x: &DenseMatrix, rank: usize) -> f64 {
    let s = solve_coala(&ProblemInstance::new(w.clone(), x.clone(), rank).unwrap()).unwrap();
    objective_value(w, &s.factors, x).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn subspace_distance_is_a_metric(m in 3usize..9, seed in any::<u64>()) {
        let r = 1 + (seed as usize) % (m - 1);
        let (a, b, c) = (basis(m, r, seed), basis(m, r, seed ^ 1), basis(m, r, seed ^ 2));
        let ab = subspace_distance(&a, &b).unwrap();
        prop_assert!((ab - subspace_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(subspace_distance(&a, &a).unwrap() < 1e-12);
        let ac = subspace_distance(&a, &c).unwrap();
        let cb = subspace_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!(ab <= (2.0 * r as f64).sqrt() + 1e-12);
    }

    #[test]
    fn spectral_energy_splits_at_every_rank(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let m = random(rows, cols, seed);
        let s = SpectralSummary::of(&m).unwrap();
        let fro2 = m.frobenius_norm().powi(2);
        prop_assert!(rel(s.total_energy(), fro2) < 1e-12);
        for r in 0..=rows.min(cols) {
            let head: f64 = s.sigmas()[..r].iter().map(|v| v * v).sum();
            prop_assert!(rel(head + s.tail_energy(r).powi(2), fro2) < 1e-12);
        }
    }

    #[test]
    fn objective_through_r_matches_objective_through_x(
        n in 2usize..7,
        extra in 0usize..20,
        seed in any::<u64>(),
    ) {
        let w = random(n + 1, n, seed);
        let x = random(n, n + extra, seed ^ 7);
        let f = FactorPair::new(random(n + 1, 1, seed ^ 8), random(1, n, seed ^ 9)).unwrap();
        let r = qr_reduce(&x).unwrap();
        let via_x = objective_value(&w, &f, &x).unwrap();
        let via_r = objective_value(&w, &f, &r.matrix().transpose()).unwrap();
        prop_assert!(rel(via_r, via_x) < 1e-10);
    }

    #[test]
    fn optimal_objective_decreases_with_rank(n in 2usize..7, seed in any::<u64>()) {
        let w = random(n + 2, n, seed);
        let x = random(n, 3 * n, seed ^ 3);
        let values: Vec<f64> = (1..=n).map(|r| objective(&w, &x, r)).collect();
        prop_assert!(values.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12) + 1e-12));
        prop_assert!(values[n - 1] < 1e-10 * w.frobenius_norm() * x.frobenius_norm());
    }

    #[test]
    fn orthogonal_mixing_of_samples_changes_nothing(n in 2usize..6, seed in any::<u64>()) {
        let k = 2 * n + 1;
        let w = random(n + 1, n, seed);
        let x = random(n, k, seed ^ 5);
        let q = basis(k, k, seed ^ 6);
        let r = 1 + (seed as usize) % (n - 1);
        let mixed = mul(&x, &q);
        prop_assert!(rel(objective(&w, &mixed, r), objective(&w, &x, r)) < 1e-9);
        let (_, tail) = oracle_best_rank_r(&mul(&w, &x), r).unwrap();
        prop_assert!(rel(objective(&w, &mixed, r), tail) < 1e-8);
    }

    #[test]
    fn tsqr_is_independent_of_the_partition(
        n in 1usize..8,
        k in 1usize..60,
        cuts in proptest::collection::vec(any::<usize>(), 4..8),
        seed in any::<u64>(),
    ) {
        let samples = random(k, n, seed);
        let reference = RFactor::from_samples(&samples).unwrap().gram();
        let scale = samples.frobenius_norm().powi(2).max(1.0);

        let chunks = split(&samples, &cuts);
        prop_assume!(chunks.len() >= 2 || k == 1);
        let (seq, stats) = tsqr_sequential_with_stats(&mut chunks.into_iter()).unwrap();
        prop_assert_eq!(stats.total_rows, k);
        prop_assert!(dist(&seq.gram(), &reference) / scale < 1e-12);

        let plan = TsqrPlan::new(TsqrStrategy::Tree, 1 + seed as usize % 5, 1 + seed as usize % 3).unwrap();
        let tree = tsqr_tree(&mut MemoryChunks::new(&samples, plan.chunk_rows).unwrap(), &plan).unwrap();
        prop_assert!(dist(&tree.gram(), &reference) / scale < 1e-12);
        prop_assert_eq!(tree.short_data(), k < n);

        let m = tree.matrix();
        for i in 0..n {
            prop_assert!(m.get(i, i) >= 0.0);
            for j in 0..i {
                prop_assert_eq!(m.get(i, j), 0.0);
            }
        }
    }
}
