//! Parallel-vs-sequential comparison for the data-parallel kernels.
//!
//! The feature-dispatched entry points (`matmul`, `knn_two_sample`) are
//! benchmarked against their always-sequential twins. With the default
//! `parallel` feature the first group runs on the rayon pool; compiled with
//! `--no-default-features` both groups are sequential and should coincide.

use criterion::{criterion_group, criterion_main, Criterion};
use hmog::tensor::{matmul, matmul_seq, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Tensor::randn(vec![256, 128], 1.0, &mut rng);
    let b = Tensor::randn(vec![128, 256], 1.0, &mut rng);
    let mut group = c.benchmark_group("matmul_256x128x256");
    group.bench_function("dispatched", |bch| {
        bch.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
    group.bench_function("sequential", |bch| {
        bch.iter(|| matmul_seq(black_box(&a), black_box(&b)).unwrap())
    });
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let real = Tensor::randn(vec![1000, 2], 1.0, &mut rng);
    let fake = Tensor::randn(vec![1000, 2], 1.0, &mut rng);
    let mut group = c.benchmark_group("knn_1000v1000");
    group.bench_function("dispatched", |bch| {
        bch.iter(|| hmog::eval::knn_two_sample(black_box(&real), black_box(&fake), 5).unwrap())
    });
    group.bench_function("sequential", |bch| {
        bch.iter(|| hmog::eval::knn_two_sample_seq(black_box(&real), black_box(&fake), 5).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_knn);
criterion_main!(benches);
