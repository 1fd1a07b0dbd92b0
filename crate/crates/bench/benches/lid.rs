//! Dimensionality-profile extraction cost per example batch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use repdetect::lid::{lid_feature_matrix, LayerData, LidConfig};
use repdetect::rng::derive_rng;
use repdetect::Matrix;

fn random_matrix(rows: usize, dims: usize, seed: u64) -> Matrix {
    let mut rng = derive_rng(seed, &[b"bench-lid"]);
    Matrix::new(
        rows,
        dims,
        (0..rows * dims)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect(),
    )
    .unwrap()
}

fn bench_feature_extraction(c: &mut Criterion) {
    let layer = LayerData {
        layer_id: 0,
        queries: random_matrix(128, 32, 1),
        pool: random_matrix(4096, 32, 2),
    };
    let ids: Vec<String> = (0..128).map(|i| format!("q{i}")).collect();
    let labels = vec![0u8; 128];
    let config = LidConfig {
        k: 20,
        batch_size: 1000,
        seed: 3,
        layers: vec![0],
    };
    c.bench_function("lid/128q-pool4096x32-k20-b1000", |b| {
        b.iter(|| {
            let table = lid_feature_matrix(
                black_box(std::slice::from_ref(&layer)),
                &ids,
                &labels,
                &config,
            );
            black_box(table.unwrap())
        })
    });
}

criterion_group!(benches, bench_feature_extraction);
criterion_main!(benches);
