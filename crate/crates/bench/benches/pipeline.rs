use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndiscan_bench::{default_image, default_panel, eval_fixture};
use ndiscan_core::{detect, evaluate_dataset, normalize_to_gray, variance_reduce, DetectorParams, EvalMode};

fn reduction(c: &mut Criterion) {
    let (volume, _) = default_panel(0);
    let mut group = c.benchmark_group("reduce");
    group.sample_size(10);
    group.bench_function("variance_reduce 258x368x512", |b| b.iter(|| variance_reduce(black_box(&volume))));
    let map = variance_reduce(&volume);
    group.bench_function("normalize_to_gray", |b| b.iter(|| normalize_to_gray(black_box(&map))));
    group.finish();
}

fn detection(c: &mut Criterion) {
    let (image, _) = default_image(1);
    let params = DetectorParams::default();
    c.bench_function("detect 258x368 otsu", |b| b.iter(|| detect(black_box(&image), &params, 1).unwrap()));
}

fn evaluation(c: &mut Criterion) {
    let (dataset, predictions) = eval_fixture(16);
    let mut group = c.benchmark_group("evaluate");
    for mode in [EvalMode::Box, EvalMode::Mask] {
        group.bench_function(format!("16 images {mode}"), |b| {
            b.iter(|| evaluate_dataset(black_box(&dataset), black_box(&predictions), mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, reduction, detection, evaluation);
criterion_main!(benches);
