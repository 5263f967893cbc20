use std::hint::black_box;

use candle_core::{Device, Tensor};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vclip_bench::{class_names, clips, dataset, desk_model};
use vclip_core::fusion::{contrastive_loss, fuse_and_score, scale_from_logit};
use vclip_core::protocols::{cluster_quality, evaluate_dataset};
use vclip_core::trainer::{batch_loss, Checkpoint, Provenance};
use vclip_core::videogen::ViewSet;
use vclip_core::{Dataset, EvalOptions, FusionMode};

fn encoders(c: &mut Criterion) {
    let model = desk_model(false);
    let prompted = desk_model(true);
    let x = clips(8, 4);
    let names = class_names();
    c.bench_function("encode_clips_8x4", |b| b.iter(|| model.encode_clips(black_box(&x)).unwrap()));
    c.bench_function("encode_clips_8x4_prompted", |b| {
        b.iter(|| prompted.encode_clips(black_box(&x)).unwrap())
    });
    c.bench_function("encode_19_class_texts", |b| {
        b.iter(|| model.encode_class_names(black_box(&names)).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let model = desk_model(false);
    let frames = model.encode_clips(&clips(16, 8)).unwrap();
    let texts = model.encode_class_names(&class_names()).unwrap();
    let scale = scale_from_logit(&model.logit_scale().unwrap()).unwrap();
    let mut group = c.benchmark_group("fuse_and_score_16x8");
    for mode in FusionMode::ALL {
        group.bench_function(mode.as_str(), |b| {
            b.iter(|| fuse_and_score(black_box(&frames), &texts, &scale, mode).unwrap())
        });
    }
    group.finish();
    let logits = Tensor::randn(0f64, 3.0, (64, 64), &Device::Cpu).unwrap();
    c.bench_function("contrastive_loss_64", |b| b.iter(|| contrastive_loss(black_box(&logits)).unwrap()));
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_backward_16x4");
    group.sample_size(20);
    let names = class_names();
    let x = clips(16, 4);
    let labels: Vec<usize> = (0..16).map(|i| i % names.len()).collect();
    for (label, prompts) in [("full", false), ("prompted", true)] {
        let model = desk_model(prompts);
        group.bench_function(label, |b| {
            b.iter(|| {
                let texts = model.encode_class_names(&names).unwrap();
                let loss = batch_loss(&model, &x, &labels, &texts, FusionMode::Embedding).unwrap();
                loss.backward().unwrap()
            })
        });
    }
    group.finish();
}

fn data(c: &mut Criterion) {
    let mut group = c.benchmark_group("data");
    group.sample_size(10);
    let ds = dataset(2);
    group.bench_function("generate_19x4_videos", |b| {
        b.iter(|| Dataset::generate(black_box(ds.manifest.clone())).unwrap())
    });
    let model = desk_model(false);
    let names = class_names();
    let opts = EvalOptions {
        views: ViewSet::single(24, 8),
        fusion: FusionMode::Embedding,
        batch_size: 16,
    };
    group.bench_function("evaluate_38_videos", |b| {
        b.iter(|| evaluate_dataset(&model, black_box(&ds), &names, &opts).unwrap())
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pred: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..19)).collect();
    let truth: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..19)).collect();
    c.bench_function("cluster_quality_2000", |b| {
        b.iter(|| cluster_quality(black_box(&pred), black_box(&truth)).unwrap())
    });
}

fn checkpoints(c: &mut Criterion) {
    let ckpt = Checkpoint::new(desk_model(true), Provenance::default());
    let bytes = ckpt.to_bytes().unwrap();
    c.bench_function("checkpoint_to_bytes", |b| b.iter(|| ckpt.to_bytes().unwrap()));
    c.bench_function("checkpoint_from_bytes", |b| {
        b.iter_batched(|| bytes.clone(), |v| Checkpoint::from_bytes(&v).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, encoders, fusion, training_step, data, metrics, checkpoints);
criterion_main!(benches);
