// SPDX-License-Identifier: Apache-2.0

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use medscat::moeller::spectral_decomposition;
use medscat::{Complex64, Field, ResolventConfig};
use medscat_bench::{laplacian_operator, wave_operator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn apply_pd(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_pd");
    for n in [1024, 8192, 65536] {
        let h = laplacian_operator(n).unwrap();
        let f = Field::random(h.grid(), &mut ChaCha8Rng::seed_from_u64(1));
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| b.iter(|| h.apply_pd(f).unwrap()));
    }
    let h = wave_operator(2, 128).unwrap();
    let f = Field::random(h.grid(), &mut ChaCha8Rng::seed_from_u64(1));
    group.bench_function("wave-2d-128", |b| b.iter(|| h.apply_pd(&f).unwrap()));
    group.finish();
}

fn resolvent_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("resolvent_solve");
    let cfg = ResolventConfig { dense_fallback: false, ..ResolventConfig::default() };
    let z = Complex64::new(0.0, 1.0);
    for n in [1024, 8192] {
        let h = laplacian_operator(n).unwrap();
        let f = Field::random(h.grid(), &mut ChaCha8Rng::seed_from_u64(2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| h.resolvent_solve(z, f, &cfg).unwrap())
        });
    }
    group.finish();
}

fn dense_eigen(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_decomposition");
    group.sample_size(10);
    for n in [128, 512] {
        let h = laplacian_operator(n).unwrap();
        group
            .bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| b.iter(|| spectral_decomposition(h).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, apply_pd, resolvent_solve, dense_eigen);
criterion_main!(benches);
