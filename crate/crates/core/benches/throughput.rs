//! Criterion benches over the data-parallel hot paths. Run with the
//! default features for the rayon build and with `--no-default-features`
//! for the sequential fallback to compare the two.

use criterion::{criterion_group, criterion_main, Criterion};
use osma_core::bench::{synth_base_corpus, Domain};
use osma_core::models::{ForwardMode, TaskModel, TaskModelConfig};
use osma_core::spectrum::mean_freq_profile;
use osma_core::util::maybe_par_map;
use std::hint::black_box;

fn bench_mean_profile(c: &mut Criterion) {
    let imgs = synth_base_corpus(Domain::Plasma, 32, 32, 1).unwrap();
    c.bench_function("mean_freq_profile_32x32x32", |b| {
        b.iter(|| black_box(mean_freq_profile(black_box(&imgs), false).unwrap()))
    });
}

fn bench_task_forward_batch(c: &mut Criterion) {
    let imgs = synth_base_corpus(Domain::Shapes, 32, 16, 2).unwrap();
    let mut cfg = TaskModelConfig::new(5);
    cfg.extractor_channels = vec![8, 8, 16, 16, 32, 32, 64, 64];
    cfg.embed_dim = 32;
    let model = TaskModel::init(cfg, 0).unwrap();
    c.bench_function("task_forward_batch16_32px", |b| {
        b.iter(|| {
            let out = maybe_par_map(&imgs, |img| model.forward(&img.0, ForwardMode::Eval));
            black_box(out)
        })
    });
}

fn bench_corpus_generation(c: &mut Criterion) {
    c.bench_function("synth_base_corpus_64x32px", |b| {
        b.iter(|| black_box(synth_base_corpus(Domain::Mosaic, 32, 64, 3).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_mean_profile,
    bench_task_forward_batch,
    bench_corpus_generation
);
criterion_main!(benches);
