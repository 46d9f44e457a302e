use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vidattr_bench::{desk_fixture, ramp};
use vidattr_core::calibration::{threshold, BandwidthRule, Kernel};
use vidattr_core::metrics::{ssim, MetricKind};
use vidattr_core::{attribution_signal, FrameShape, Reconstructor, WindowPair};

fn signal(c: &mut Criterion) {
    let mut group = c.benchmark_group("attribution_signal");
    for n in [4usize, 8, 16] {
        let (mut toy, video) = desk_fixture(n);
        let pair = WindowPair::fixed(4).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &video, |b, v| {
            b.iter(|| attribution_signal(black_box(v), &mut toy, pair, MetricKind::Mse).unwrap())
        });
    }
    group.finish();
}

fn reconstruct(c: &mut Criterion) {
    let (mut toy, video) = desk_fixture(8);
    c.bench_function("toy_reconstruct_32_frames", |b| b.iter(|| toy.reconstruct(black_box(&video)).unwrap()));
}

fn kde(c: &mut Criterion) {
    let mut group = c.benchmark_group("kde_threshold");
    for s in [20usize, 200] {
        let signals: Vec<f64> = ramp(s, 3).into_iter().map(|x| 0.01 + 0.001 * x as f64).collect();
        group.bench_with_input(BenchmarkId::from_parameter(s), &signals, |b, sig| {
            b.iter(|| threshold(black_box(sig), 0.05, Kernel::Gaussian, BandwidthRule::Scott).unwrap())
        });
    }
    group.finish();
}

fn ssim_frame(c: &mut Criterion) {
    let shape = FrameShape::new(64, 64, 3);
    let a = ramp(shape.len(), 1);
    let b = ramp(shape.len(), 2);
    c.bench_function("ssim_64x64x3", |bench| bench.iter(|| ssim(black_box(&a), black_box(&b), shape).unwrap()));
}

criterion_group!(benches, signal, reconstruct, kde, ssim_frame);
criterion_main!(benches);
