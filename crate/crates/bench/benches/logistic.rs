//! Detector training cost on a typical feature table.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use repdetect::detect::{train_logistic, LogisticHyperparams};
use repdetect::rng::derive_rng;

fn bench_training(c: &mut Criterion) {
    let mut rng = derive_rng(1, &[b"bench-logistic"]);
    let (rows, cols) = (800, 4);
    let mut x = Vec::with_capacity(rows * cols);
    let mut y = Vec::with_capacity(rows);
    for i in 0..rows {
        let label = (i % 2) as u8;
        let center = if label == 1 { 0.8 } else { -0.8 };
        for _ in 0..cols {
            x.push(center + rng.gen_range(-1.0..1.0));
        }
        y.push(label);
    }
    let hyper = LogisticHyperparams::default();
    c.bench_function("logistic/train-800x4", |b| {
        b.iter(|| {
            let model = train_logistic(black_box(&x), rows, cols, &y, &hyper);
            black_box(model.unwrap())
        })
    });
}

criterion_group!(benches, bench_training);
criterion_main!(benches);
