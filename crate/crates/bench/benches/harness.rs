use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gibbs_pruning::nn::data::{gather_batch, synthetic_dataset};
use gibbs_pruning::nn::models::toy_cnn;
use gibbs_pruning::nn::network::{backward, forward};
use gibbs_pruning::rng::RandomSource;

fn bench_forward_backward(c: &mut Criterion) {
    let (train, _) = synthetic_dataset(1, 40).unwrap();
    let indices: Vec<usize> = (0..32).collect();
    let (batch, labels) = gather_batch(&train, &indices, None);
    let net = toy_cnn([1, 8, 8], 4, &RandomSource::new(5)).unwrap();

    c.bench_function("toy_cnn_forward_b32", |b| {
        b.iter(|| black_box(forward(&net, &batch, true).unwrap()))
    });
    c.bench_function("toy_cnn_forward_backward_b32", |b| {
        b.iter(|| {
            let (_, cache) = forward(&net, &batch, true).unwrap();
            black_box(backward(&net, &cache, &labels).unwrap())
        })
    });
}

criterion_group!(benches, bench_forward_backward);
criterion_main!(benches);
