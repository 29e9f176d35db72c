use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use hifu_core::kernels::{caputo_l1_apply, mittag_leffler};
use hifu_core::L1Weights;

fn l1_weights(c: &mut Criterion) {
    let mut g = c.benchmark_group("l1_weights");
    for n in [100usize, 1_000, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| L1Weights::new(black_box(0.8), n).unwrap()));
    }
    g.finish();
}

fn caputo(c: &mut Criterion) {
    let hist: Vec<f64> = (0..=1024).map(|k| 2.0 * k as f64 / 1024.0).collect();
    c.bench_function("caputo_l1_apply_1024", |b| b.iter(|| caputo_l1_apply(black_box(&hist), 0.8, 1.0 / 1024.0).unwrap()));
}

fn ml(c: &mut Criterion) {
    c.bench_function("mittag_leffler_0.8", |b| b.iter(|| mittag_leffler(black_box(0.8), 1.0, black_box(-3.0)).unwrap()));
}

criterion_group!(benches, l1_weights, caputo, ml);
criterion_main!(benches);
