//! Benchmarks for the hot paths: pooling, attention, and the audio front
//! end. Sizes mirror a typical utterance (a few seconds of audio, a few
//! hundred feature frames, 40 mel bands).

use criterion::{criterion_group, criterion_main, Criterion};
use segpool::features::extract_logmel;
use segpool::neural::AttentionBlock;
use segpool::pooling::{gap, sap};
use segpool::vad::detect;
use segpool::{FrameSpec, MelConfig, VadConfig};
use segpool_bench::{random_mat, rng, speech_mask, tone_clip};
use std::hint::black_box;

fn pooling_benches(c: &mut Criterion) {
    let features = random_mat(300, 40, 11);
    let mask = speech_mask(300, 0.3, 12);
    let attention = AttentionBlock::<f32>::new(40, 4, true, &mut rng(13)).unwrap();

    c.bench_function("gap 300x40", |b| {
        b.iter(|| gap(black_box(&features)).unwrap())
    });
    c.bench_function("sap 300x40 plain mean", |b| {
        b.iter(|| sap(black_box(&features), &mask, None).unwrap())
    });
    c.bench_function("sap 300x40 with attention", |b| {
        b.iter(|| sap(black_box(&features), &mask, Some(&attention)).unwrap())
    });
}

fn attention_benches(c: &mut Criterion) {
    let mut attention = AttentionBlock::<f32>::new(40, 4, true, &mut rng(21)).unwrap();
    let input = random_mat(100, 40, 22);
    let upstream = random_mat(100, 40, 23);

    c.bench_function("attention forward 100x40", |b| {
        b.iter(|| attention.forward(black_box(&input)).unwrap())
    });
    c.bench_function("attention forward+backward 100x40", |b| {
        b.iter(|| {
            let (_, cache) = attention.forward_cached(black_box(&input)).unwrap();
            attention.backward(&cache, black_box(&upstream)).unwrap()
        })
    });
}

fn frontend_benches(c: &mut Criterion) {
    let clip = tone_clip(3.0, 16000);
    let frame = FrameSpec::default();
    let mel = MelConfig::default();
    let vad_config = VadConfig::default();

    c.bench_function("logmel 3s clip", |b| {
        b.iter(|| extract_logmel(black_box(&clip), &frame, &mel).unwrap())
    });
    c.bench_function("vad 3s clip", |b| {
        b.iter(|| detect(black_box(&clip), &vad_config).unwrap())
    });
}

criterion_group!(
    benches,
    pooling_benches,
    attention_benches,
    frontend_benches
);
criterion_main!(benches);
