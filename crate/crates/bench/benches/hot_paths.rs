use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use vocalid::dsp::{log_mel, MelConfig, StftConfig};
use vocalid::eval::{roc, ScoredTrial};
use vocalid::models::{discriminator_specs, embedder_specs, DiscriminatorArch, EmbedderArch, WINDOW_SAMPLES};
use vocalid::nn::{LayerSpec, Network, Tensor};
use vocalid::AudioClip;

fn window(rng: &mut ChaCha8Rng) -> AudioClip {
    let samples = (0..WINDOW_SAMPLES).map(|_| rng.random_range(-0.5..0.5)).collect();
    AudioClip::new(samples, 16_000, "bench").unwrap()
}

fn front_end(c: &mut Criterion) {
    let clip = window(&mut ChaCha8Rng::seed_from_u64(1));
    c.bench_function("log_mel_10s", |b| {
        b.iter(|| log_mel(black_box(&clip), &StftConfig::default(), &MelConfig::default()).unwrap())
    });
}

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conv: Network<f32> = Network::build(
        &[("conv".into(), LayerSpec::Conv2d { in_channels: 1, out_channels: 8, kernel: 3, stride: 1, padding: vocalid::nn::Padding::Same })],
        &mut rng,
    )
    .unwrap();
    let x = Tensor::new(vec![1, 1, 80, 998], (0..80 * 998).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    c.bench_function("conv2d_3x3_8ch_window", |b| b.iter(|| conv.infer(black_box(&x)).unwrap()));

    let d: Network<f32> = Network::build(&discriminator_specs(&DiscriminatorArch::default()).unwrap(), &mut rng).unwrap();
    c.bench_function("discriminator_window", |b| b.iter(|| d.infer(black_box(&x)).unwrap()));

    let s: Network<f32> = Network::build(&embedder_specs(&EmbedderArch::default(), 8).unwrap(), &mut rng).unwrap();
    let xs = x.clone().reshape(vec![1, 80, 998]).unwrap();
    c.bench_function("embedder_window", |b| b.iter(|| s.infer(black_box(&xs)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials: Vec<ScoredTrial> = (0..10_000)
        .map(|i| ScoredTrial {
            score: rng.random_range(-1.0..1.0),
            target: i % 8 == 0,
            tag: "REAL".into(),
            dataset: "bench".into(),
            track_id: i.to_string(),
            profile_id: String::new(),
        })
        .collect();
    c.bench_function("roc_eer_10k_trials", |b| b.iter(|| roc(black_box(&trials)).unwrap()));
}

criterion_group!(benches, front_end, networks, metrics);
criterion_main!(benches);
