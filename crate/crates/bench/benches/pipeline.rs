use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use planmae_bench::floorplans;
use planmae_core::training::grad;
use planmae_core::{
    patchify, ssim, unpatchify, Mae, MaskSpec, Mode, ModelConfig, OptState, PatchGrid, Strategy, TrainConfig,
};

fn geometry(c: &mut Criterion) {
    let img = floorplans(1, Mode::Colored, 256).remove(0);
    let mut g = c.benchmark_group("patchify_256_colored");
    for p in [8, 16] {
        g.bench_with_input(BenchmarkId::new("roundtrip", p), &p, |b, &p| {
            b.iter(|| unpatchify(&patchify(black_box(&img), p).unwrap(), false).unwrap())
        });
    }
    g.finish();
}

fn masking(c: &mut Criterion) {
    let grid = PatchGrid::with_shape(16, 16, 16);
    let mut g = c.benchmark_group("mask_plan_16x16");
    for spec in MaskSpec::eval_presets() {
        g.bench_function(spec.strategy.name(), |b| {
            b.iter(|| spec.with_seed(7).plan(black_box(grid)).unwrap())
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let config = ModelConfig::desk(1);
    let images = floorplans(16, Mode::LineDrawing, 64);
    let train = TrainConfig::default();
    let mut model = Mae::<f32>::init(config).unwrap();
    let mut opt = OptState::new(&model.params, train.adamw());
    let plans: Vec<_> = (0..images.len() as u64)
        .map(|i| {
            MaskSpec::new(Strategy::Random, 0.75)
                .with_seed(i)
                .plan(model.grid())
                .unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("desk");
    g.sample_size(20);
    g.bench_function("train_step_batch16", |b| {
        b.iter(|| {
            let (_, grads) = grad(&model, &images, &plans).unwrap();
            opt.step(&mut model.params, &grads, 1e-4).unwrap();
        })
    });
    g.bench_function("reconstruct", |b| {
        b.iter(|| model.reconstruct(black_box(&images[0]), &plans[0]).unwrap())
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let imgs = floorplans(2, Mode::Colored, 256);
    c.bench_function("ssim_256_colored", |b| {
        b.iter(|| ssim(black_box(&imgs[0]), black_box(&imgs[1]), 1.0).unwrap())
    });
}

criterion_group!(benches, geometry, masking, train_step, metrics);
criterion_main!(benches);
