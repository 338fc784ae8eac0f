//! Criterion benchmarks for the hot paths: encoder/decoder passes, one
//! full training iteration, distortion transfer and the quality metrics.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use satres_core::ddn::{sample_patch, train_ddn, training_step, OptimState, TrainArtifacts};
use satres_core::degradations::{apply_degradation, synthetic_aerial, DegradationSpec};
use satres_core::metrics::{psnr, ssim};
use satres_core::transfer::transfer_distortion;
use satres_core::{build_networks, RunConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_cfg() -> RunConfig {
    RunConfig {
        patch_size: 64,
        ddn_iterations: 0,
        n_alpha: 8,
        seed: 3,
        ..RunConfig::default()
    }
}

fn bench_networks(c: &mut Criterion) {
    let cfg = desk_cfg();
    let nets = build_networks(&cfg, (64, 64)).unwrap();
    let img = synthetic_aerial(64, 64, 1);

    c.bench_function("encode_64", |b| {
        b.iter(|| nets.content_encoder.encode(black_box(&img)).unwrap())
    });

    let (latent, _) = nets.content_encoder.encode(&img).unwrap();
    c.bench_function("decode_64", |b| {
        b.iter(|| nets.decoder.decode(black_box(&latent)).unwrap())
    });

    c.bench_function("discriminate_64", |b| {
        b.iter(|| nets.discriminator.discriminate(black_box(&latent)).unwrap())
    });
}

fn bench_training(c: &mut Criterion) {
    let cfg = desk_cfg();
    let clean = synthetic_aerial(128, 128, 2);
    let distorted = apply_degradation(&clean, &DegradationSpec::default_compose()).unwrap();
    let mut bundle = train_ddn(&clean, &distorted, &cfg, TrainArtifacts::none()).unwrap();
    let mut opt = OptimState::new(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    c.bench_function("ddn_training_step_64", |b| {
        b.iter(|| {
            let pr = sample_patch(&clean, 64, &mut rng).unwrap();
            let pd = sample_patch(&distorted, 64, &mut rng).unwrap();
            training_step(&mut bundle, &pr, &pd, &mut opt).unwrap()
        })
    });

    c.bench_function("transfer_distortion_128", |b| {
        b.iter(|| transfer_distortion(&bundle, &clean, &distorted, black_box(10)).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let a = synthetic_aerial(224, 224, 4);
    let b_img = apply_degradation(&a, &DegradationSpec::default_compose()).unwrap();

    c.bench_function("psnr_224", |b| {
        b.iter(|| psnr(black_box(&a), black_box(&b_img)).unwrap())
    });
    c.bench_function("ssim_224", |b| {
        b.iter(|| ssim(black_box(&a), black_box(&b_img)).unwrap())
    });
    c.bench_function("gaussian_blur_224", |b| {
        b.iter(|| {
            apply_degradation(black_box(&a), &DegradationSpec::GaussianBlur { sigma: 1.5 })
                .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_networks, bench_training, bench_metrics
}
criterion_main!(benches);
