use std::hint::black_box;

use bfsa::derivatives::Derivatives;
use bfsa::likelihood::{grad_exact, nll};
use bfsa::predict::{cond_cov, cond_mean};
use bfsa::saa::{ProbeProducts, ProbeSet};
use bfsa::{assemble, PredictionPlan};
use bfsa_bench::Fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SIZES: [usize; 3] = [512, 2048, 8192];

fn operations(c: &mut Criterion) {
    let mut g = c.benchmark_group("operations");
    g.sample_size(10);
    for n in SIZES {
        let fx = Fixture::new(n);
        let d = Derivatives::new(&fx.spec, &fx.points, &fx.k).unwrap();
        let ds = d.all_first().unwrap();
        g.bench_with_input(BenchmarkId::new("assemble", n), &fx, |b, fx| {
            b.iter(|| assemble(&fx.spec, &fx.points, &fx.plan).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("nll", n), &fx, |b, fx| b.iter(|| nll(&fx.k, black_box(&fx.y)).unwrap()));
        g.bench_with_input(BenchmarkId::new("sym_factorize", n), &fx, |b, fx| b.iter(|| fx.k.sym_factorize().unwrap()));
        g.bench_with_input(BenchmarkId::new("grad_exact", n), &fx, |b, fx| {
            b.iter(|| grad_exact(&fx.k, &ds, &fx.y).unwrap())
        });
        let w = fx.k.sym_factorize().unwrap();
        let probes = ProbeSet::rademacher(n, 16, 0);
        g.bench_with_input(BenchmarkId::new("saa_16_probes", n), &fx, |b, fx| {
            b.iter(|| ProbeProducts::new(&w, &ds, &probes).unwrap().fisher(&fx.k))
        });
        g.bench_with_input(BenchmarkId::new("predict", n), &fx, |b, fx| {
            b.iter(|| {
                let pp = PredictionPlan::new(&fx.spec, &fx.points, &fx.k, &fx.targets).unwrap();
                (cond_mean(&fx.k, &fx.y, &pp).unwrap(), cond_cov(&fx.k, &pp).variances())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, operations);
criterion_main!(benches);
