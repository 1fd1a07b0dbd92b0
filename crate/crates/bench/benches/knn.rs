//! Exact nearest-neighbor throughput over a mid-sized pool.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use repdetect::knn::knn_search_batch;
use repdetect::rng::derive_rng;
use repdetect::Matrix;

fn random_matrix(rows: usize, dims: usize, seed: u64) -> Matrix {
    let mut rng = derive_rng(seed, &[b"bench-knn"]);
    Matrix::new(
        rows,
        dims,
        (0..rows * dims)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect(),
    )
    .unwrap()
}

fn bench_batch_queries(c: &mut Criterion) {
    let pool = random_matrix(4096, 32, 1);
    let queries = random_matrix(256, 32, 2);
    for k in [10usize, 100] {
        c.bench_function(&format!("knn/batch-256q-4096x32-k{k}"), |b| {
            b.iter(|| {
                let out =
                    knn_search_batch(black_box(&queries), black_box(&pool), k, false).unwrap();
                black_box(out)
            })
        });
    }
}

criterion_group!(benches, bench_batch_queries);
criterion_main!(benches);
