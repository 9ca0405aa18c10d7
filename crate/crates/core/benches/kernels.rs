//! Batched score evaluation and reverse-SDE sampling on a one-thread pool
//! against the default pool. Building with `--no-default-features` runs
//! both variants through the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mollescore::mollify::Mollifier;
use mollescore::sampler::{reverse_sde, EmpiricalField};
use mollescore::{par, rng, score, Dataset, MollifySpec, SdeConfig, TargetSpec, TimeGrid};
use std::hint::black_box;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

fn queries(d: usize, q: usize) -> Vec<f64> {
    let mut r = rng::stream(11);
    rng::normal_vec(&mut r, d * q)
}

fn batch_scores(c: &mut Criterion) {
    let mut g = c.benchmark_group("empirical_score_batch");
    for &(n, d) in &[(1000usize, 2usize), (500, 784)] {
        let ds = TargetSpec::GaussianIso { d }.sample(n, 3).unwrap();
        let xs = queries(d, 256);
        for (name, pool) in pools() {
            g.bench_with_input(BenchmarkId::new(name, format!("N{n}_d{d}")), &ds, |b, ds: &Dataset| {
                b.iter(|| {
                    pool.install(|| par::map_indices(256, |i| score::score_emp(ds, 0.01, &xs[i * d..(i + 1) * d]).unwrap()))
                })
            });
        }
    }
    g.finish();
}

fn mollified_scores(c: &mut Criterion) {
    let mut g = c.benchmark_group("mollified_score_batch");
    let ds = TargetSpec::SwissRoll2d.sample(1000, 5).unwrap();
    let moll = Mollifier::new(&ds, &MollifySpec::fixed(0.3), 7).unwrap();
    let xs = queries(2, 256);
    for (name, pool) in pools() {
        g.bench_function(name, |b| {
            b.iter(|| pool.install(|| par::map_indices(256, |i| moll.score(0.01, &xs[2 * i..2 * i + 2]).unwrap())))
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("reverse_sde");
    g.sample_size(10);
    let ds = TargetSpec::SwissRoll2d.sample(200, 5).unwrap();
    let field = EmpiricalField::new(&ds);
    let cfg = SdeConfig {
        t_final: 15.0,
        t_cutoff: 0.01,
        time_grid: TimeGrid::Geometric { rho: 1.1 },
        n_samples: 256,
        seed: 1,
    };
    for (name, pool) in pools() {
        g.bench_function(name, |b| b.iter(|| pool.install(|| black_box(reverse_sde(&field, &cfg).unwrap()))));
    }
    g.finish();
}

criterion_group!(benches, batch_scores, mollified_scores, sampling);
criterion_main!(benches);
