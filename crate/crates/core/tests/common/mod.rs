#![allow(dead_code)]

use std::sync::Arc;

use bandsep_core::audio::{Stem, StemSet, Waveform};
use bandsep_core::gradcheck::{check, GradCheckReport};
use bandsep_core::graph::{Graph, Var};
use bandsep_core::tensor::Tensor;
use bandsep_core::config::{AugmentSpec, Config, ModelConfig, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_stft() -> StftConfig {
    StftConfig { window_size: 64, hop: 16, kept_bins: 32, ..StftConfig::default() }
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig { g: 8, n_band: 2, n_enc: 2, n_rope: 1, seq_dim: Some(8), heads: 2, chunk_seconds: 0.02, ..ModelConfig::default() }
}

pub fn tiny_config() -> Config {
    let mut c = Config { model: tiny_model(), stft: tiny_stft(), ..Config::default() };
    c.train.multires_windows = vec![[128, 32], [64, 16], [32, 8]];
    c.train.augment = AugmentSpec::disabled();
    c.train.batch_size = 2;
    c.train.lr = 1e-2;
    c.train.seed = 7;
    c
}

pub fn sine(len: usize, freq: f64, amp: f64) -> Waveform {
    Waveform::from_fn(len, |c, i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 44100.0 + c as f64 * 0.3).sin()) as f32)
}

/// Short bursts of seeded white noise.
pub fn noise_bursts(len: usize, seed: u64, amp: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 128;
    let data: Vec<[f32; 2]> = (0..len)
        .map(|i| {
            let on = (i / period) % 2 == 0;
            let mut s = || if on { (amp * rng.gen_range(-1.0..1.0)) as f32 } else { 0.0 };
            [s(), s()]
        })
        .collect();
    Waveform::new(data.iter().map(|p| p[0]).collect(), data.iter().map(|p| p[1]).collect())
}

/// Vocals = sine, drums = noise bursts, bass/other silent.
pub fn two_stem_chunk(len: usize, seed: u64) -> StemSet {
    let mut set = StemSet::silent(len);
    *set.stem_mut(Stem::Vocals) = sine(len, 1378.125, 0.5);
    *set.stem_mut(Stem::Drums) = noise_bursts(len, seed, 0.3);
    set
}

/// Four non-silent stems with distinct content.
pub fn four_stem_song(len: usize, seed: u64) -> StemSet {
    let mut set = StemSet::silent(len);
    for (k, s) in Stem::ALL.into_iter().enumerate() {
        let f = 220.0 * (k + 1) as f64 + seed as f64 * 13.0;
        let mut w = sine(len, f, 0.2);
        w.add_assign(&noise_bursts(len, seed * 10 + k as u64, 0.05));
        *set.stem_mut(s) = w;
    }
    set
}

pub const GRAD_SAMPLES: usize = 60;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// `Σ x ⊙ r`, a generic scalar readout.
pub fn dot<'g>(x: Var<'g>, r: Arc<Tensor>) -> Var<'g> {
    let v: f64 = x.value().data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    x.graph().custom(Tensor::scalar(v), &[x], move || Box::new(move |g: &Tensor| vec![Some(r.map(|w| w * g.item()))]))
}

/// Gradient-checks `build` (a scalar function of the leaves) on `inputs`.
pub fn run<F>(inputs: Vec<Tensor>, build: F) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&g, &leaves);
    let mut grads = g.backward(out);
    let analytic: Vec<Tensor> = leaves.iter().zip(&inputs).map(|(l, t)| grads.take(*l).unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();
    let eval = |ts: &[Tensor]| {
        let g = Graph::inference();
        let leaves: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        build(&g, &leaves).value().item()
    };
    check(&inputs, &analytic, eval, GRAD_SAMPLES, 1e-5, 11)
}

