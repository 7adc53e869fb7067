use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bbm_absorb::generator::solve_a_zero_intercept;
use bbm_absorb::gw::{distribution, DistributionOptions};
use bbm_absorb::law::OffspringLaw;
use bbm_absorb::par::Parallelism;
use bbm_absorb::series::{ser_mul, TruncatedSeries};
use bbm_absorb::sim::{run_ensemble, SimConfig};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Available)];

fn bench(c: &mut Criterion) {
    let law = OffspringLaw::dyadic();
    let mut g = c.benchmark_group("parallel_vs_sequential");
    g.sample_size(10);

    let a = TruncatedSeries::new((0..20_000).map(|n| 1.0 / (1.0 + n as f64)).collect());
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new("ser_mul_20k", name), &par, |b, &par| b.iter(|| ser_mul(black_box(&a), &a, par)));
    }
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new("recursion_20k", name), &par, |b, &par| {
            b.iter(|| solve_a_zero_intercept(&law, 1.5, black_box(20_000), par).unwrap())
        });
    }
    let gen = solve_a_zero_intercept(&law, 1.5, 4096, Parallelism::Available).unwrap();
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new("distribution_4k", name), &par, |b, &par| {
            b.iter(|| distribution(&gen, &law, 0.5, 4096, DistributionOptions::for_order(4096), par).unwrap())
        });
    }
    let cfg = SimConfig::single(law.clone(), 1.5, 0.5, 1);
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new("ensemble_20k", name), &par, |b, &par| b.iter(|| run_ensemble(&cfg, black_box(20_000), par).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
