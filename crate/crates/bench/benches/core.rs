// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use keymerge::diagnostics::akd;
use keymerge::edit::closed_form_update;
use keymerge::model::{ModelCheckpoint, ModelConfig};
use keymerge::tokenizer::Tokenizer;
use ndarray::Array2;

fn forward(c: &mut Criterion) {
    let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
    let tok = Tokenizer::from_words(&words);
    let model = ModelCheckpoint::init(ModelConfig::reference(tok.len()), tok).unwrap();
    let ids: Vec<_> = (0..16).map(|i| (i * 7 % 200) as _).collect();
    c.bench_function("forward_16_tokens", |b| b.iter(|| model.forward(black_box(&ids)).unwrap()));
}

fn update(c: &mut Criterion) {
    let (d_model, d_mlp, n) = (128, 512, 10);
    let w0 = Array2::from_shape_fn((d_model, d_mlp), |(i, j)| ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.5);
    let k = Array2::from_shape_fn((d_mlp, n), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
    let v = Array2::from_shape_fn((d_model, n), |(i, j)| ((i + j) % 5) as f64);
    let cov =
        Array2::from_shape_fn(
            (d_mlp, d_mlp),
            |(i, j)| if i == j { 2.0 } else { 1.0 / (1.0 + (i as f64 - j as f64).abs()) },
        );
    c.bench_function("closed_form_update_512x10", |b| {
        b.iter(|| closed_form_update(black_box(&w0), &k, &v, &cov, 1e-8).unwrap())
    });
}

fn key_distance(c: &mut Criterion) {
    let keys: Vec<Vec<f64>> = (0..10).map(|i| (0..512).map(|j| ((i * 13 + j) % 17) as f64).collect()).collect();
    c.bench_function("akd_10x512", |b| b.iter(|| akd(black_box(&keys)).unwrap()));
}

criterion_group!(benches, forward, update, key_distance);
criterion_main!(benches);
