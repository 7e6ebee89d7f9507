use std::hint::black_box;

use bandsep_bench::{pattern, test_signal};
use bandsep_core::config::{ModelConfig, StftConfig};
use bandsep_core::{band_split, stft, BandedTensor, Network, SplitConv};
use criterion::{criterion_group, criterion_main, Criterion};

fn spectral(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let wave = test_signal(3.0);
    c.bench_function("stft_3s", |b| b.iter(|| stft(black_box(&wave), &cfg).unwrap()));
    let spec = stft(&wave, &cfg).unwrap();
    c.bench_function("istft_3s", |b| b.iter(|| bandsep_core::istft(black_box(&spec)).unwrap()));
    c.bench_function("band_split_3s", |b| b.iter(|| band_split(black_box(&spec), 4).unwrap()));
}

fn grouped_conv(c: &mut Criterion) {
    let x = BandedTensor::new(pattern(&[224, 128, 64]), 4).unwrap();
    for k in [1, 3] {
        let conv = SplitConv::new(pattern(&[224, 56, k, k]), Some(pattern(&[224])), 4).unwrap();
        c.bench_function(&format!("split_conv_k{k}"), |b| b.iter(|| conv.forward(black_box(&x)).unwrap()));
    }
}

fn forward(c: &mut Criterion) {
    let stft_cfg = StftConfig { window_size: 512, hop: 128, kept_bins: 192, ..StftConfig::default() };
    let model = ModelConfig { g: 16, chunk_seconds: 1.0, ..ModelConfig::default() };
    let net = Network::new(&model, &stft_cfg, 0).unwrap();
    let spec = stft(&test_signal(1.0), &stft_cfg).unwrap();
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("forward_small_1s", |b| b.iter(|| net.model_forward(black_box(&spec)).unwrap()));
    group.finish();
}

criterion_group!(benches, spectral, grouped_conv, forward);
criterion_main!(benches);
