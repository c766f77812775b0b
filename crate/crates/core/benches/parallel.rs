use adiabatica::band::BandOptions;
use adiabatica::bloch::{piezo_cancellation, pump, TorusGrid};
use adiabatica::exec;
use adiabatica::models::{RiceMele, TwoBand3D};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pump_bench(c: &mut Criterion) {
    let model = RiceMele::default();
    let grid = TorusGrid::new(128, 64).unwrap();
    let opts = BandOptions::default();
    let mut group = c.benchmark_group("pump_128x64");
    group.bench_function(BenchmarkId::new("sequential", 1), |b| {
        b.iter(|| exec::sequential(|| pump(&model, &grid, &opts).unwrap()))
    });
    group.bench_function(BenchmarkId::new("parallel", exec::worker_count()), |b| {
        b.iter(|| pump(&model, &grid, &opts).unwrap())
    });
    group.finish();
}

fn piezo_bench(c: &mut Criterion) {
    let model = TwoBand3D::default();
    let grid = TorusGrid::new(24, 16).unwrap();
    let opts = BandOptions::default();
    let b_field = [0.3, -0.2, 0.5];
    let mut group = c.benchmark_group("piezo_24");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", 1), |b| {
        b.iter(|| exec::sequential(|| piezo_cancellation(&model, b_field, 0.0, &grid, &opts).unwrap()))
    });
    group.bench_function(BenchmarkId::new("parallel", exec::worker_count()), |b| {
        b.iter(|| piezo_cancellation(&model, b_field, 0.0, &grid, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pump_bench, piezo_bench);
criterion_main!(benches);
