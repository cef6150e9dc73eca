use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use instasplat::pipeline::split;
use instasplat::propagation::dbscan::dbscan_filter;
use instasplat::propagation::PropagationConfig;
use instasplat::raster::{backward_opacity_color, render, RenderMode};
use instasplat::Vec3;
use instasplat_bench::corrupted_scene;

fn raster(c: &mut Criterion) {
    let bench = corrupted_scene(1);
    let view = &bench.views[0];
    c.bench_function("render 2000 splats 128x128", |b| {
        b.iter(|| render(&bench.scene, &view.camera, RenderMode::Rgb))
    });
    let mask = view.masks.masks.first().map(|(_, m)| m.clone());
    c.bench_function("backward 2000 splats 128x128", |b| {
        b.iter(|| backward_opacity_color(&bench.scene, &view.camera, &view.image, mask.as_ref(), 0.25).unwrap())
    });
}

fn propagation(c: &mut Criterion) {
    let bench = corrupted_scene(1);
    let cfg = PropagationConfig::default();
    let mut group = c.benchmark_group("split");
    group.sample_size(10);
    group.bench_function("5 objects 20 views", |b| {
        b.iter(|| split(&bench.views, &bench.dense, &cfg).unwrap())
    });
    group.finish();
}

fn dbscan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pts: Vec<Vec3> = (0..5000)
        .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
        .collect();
    c.bench_function("dbscan 5000 points", |b| {
        b.iter_batched(|| pts.clone(), |p| dbscan_filter(&p, 0.05, 8), BatchSize::LargeInput)
    });
}

criterion_group!(benches, raster, propagation, dbscan);
criterion_main!(benches);
