//! The separation network: band split, grouped lift to `g` channels, an
//! encoder of split TFC blocks with time-only downsampling, the dual-path
//! sequence model, a lighter decoder with additive skip fusion, and the
//! grouped lift back to `4·n_band` channels before the band merge.
//!
//! Frequency size stays at `bins_per_band` throughout; only the frame axis
//! is downsampled (×2 per encoder layer, ceiling division).

use crate::bandsplit::{merge_var, split_var, BandedTensor};
use crate::config::{ModelConfig, StftConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::ConvGeom;
use crate::params::{Bound, Declarations, Init, ParamId, ParamSpec, ParamStore};
use crate::seqmodel::SeqModel;
use crate::spectral::ComplexSpectrogram;
use crate::tensor::Tensor;

/// Test-harness switches. The default is the real model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Harness {
    pub identity_activations: bool,
    pub disable_norms: bool,
}

impl Harness {
    /// Identity activations and no normalization, which makes every
    /// non-attention path affine.
    pub fn linear() -> Self {
        Harness { identity_activations: true, disable_norms: true }
    }

    pub(crate) fn activate<'g>(&self, x: Var<'g>) -> Var<'g> {
        if self.identity_activations {
            x
        } else {
            x.gelu()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    groups: usize,
    k: usize,
    down: usize,
}

impl Conv {
    fn declare(decl: &mut Declarations, name: &str, c_in: usize, c_out: usize, groups: usize, k: usize, bias: bool) -> Self {
        let fan_in = c_in / groups * k * k;
        Conv {
            w: decl.declare(format!("{name}.w"), &[c_out, c_in / groups, k, k], Init::Uniform { fan_in }),
            b: bias.then(|| decl.declare(format!("{name}.b"), &[c_out], Init::Zeros)),
            groups,
            k,
            down: 1,
        }
    }

    /// Kernel `(1, factor)` with stride `factor` over time.
    fn declare_down(decl: &mut Declarations, name: &str, c_in: usize, c_out: usize, groups: usize, factor: usize) -> Self {
        Conv {
            w: decl.declare(format!("{name}.w"), &[c_out, c_in / groups, 1, factor], Init::Uniform { fan_in: c_in / groups * factor }),
            b: Some(decl.declare(format!("{name}.b"), &[c_out], Init::Zeros)),
            groups,
            k: 1,
            down: factor,
        }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let frames = x.shape()[2];
        let geom = if self.down > 1 {
            ConvGeom::downsample(self.groups, self.down, frames)
        } else {
            ConvGeom::same(self.groups, self.k, frames)
        };
        x.conv2d(p.var(self.w), p.opt(self.b), geom)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl GroupNorm {
    fn declare(decl: &mut Declarations, name: &str, c: usize, groups: usize) -> Self {
        GroupNorm {
            gamma: decl.declare(format!("{name}.gamma"), &[c], Init::Ones),
            beta: decl.declare(format!("{name}.beta"), &[c], Init::Zeros),
            groups,
        }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        if harness.disable_norms {
            x
        } else {
            x.group_norm(self.groups, p.var(self.gamma), p.var(self.beta))
        }
    }
}

/// Frequency-axis fully connected layer with separate weights per band.
#[derive(Clone, Debug, PartialEq)]
struct BandFc {
    w: ParamId,
    b: ParamId,
}

impl BandFc {
    fn declare(decl: &mut Declarations, name: &str, n_band: usize, f_in: usize, f_out: usize) -> Self {
        BandFc {
            w: decl.declare(format!("{name}.w"), &[n_band, f_out, f_in], Init::Uniform { fan_in: f_in }),
            b: decl.declare(format!("{name}.b"), &[n_band, f_out], Init::Zeros),
        }
    }
}

/// Residual block: `n_split` × (grouped conv → group norm → GELU), then a
/// per-band frequency bottleneck (TDF) added residually, then the dense 1×1
/// skip of the block input added.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitTfcBlock {
    convs: Vec<(Conv, GroupNorm)>,
    tdf: (GroupNorm, BandFc, GroupNorm, BandFc),
    skip: Conv,
    channels: usize,
}

impl SplitTfcBlock {
    fn declare(decl: &mut Declarations, name: &str, c: usize, n_split: usize, cfg: &ModelConfig, bins: usize) -> Self {
        let nb = cfg.n_band;
        let convs = (0..n_split)
            .map(|i| {
                (
                    Conv::declare(decl, &format!("{name}.conv{i}"), c, c, nb, cfg.k_inner, true),
                    GroupNorm::declare(decl, &format!("{name}.norm{i}"), c, nb),
                )
            })
            .collect();
        let hidden = (bins / cfg.tdf_factor).max(1);
        let tdf = (
            GroupNorm::declare(decl, &format!("{name}.tdf.norm0"), c, nb),
            BandFc::declare(decl, &format!("{name}.tdf.fc0"), nb, bins, hidden),
            GroupNorm::declare(decl, &format!("{name}.tdf.norm1"), c, nb),
            BandFc::declare(decl, &format!("{name}.tdf.fc1"), nb, hidden, bins),
        );
        let skip = Conv::declare(decl, &format!("{name}.skip"), c, c, 1, 1, true);
        SplitTfcBlock { convs, tdf, skip, channels: c }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        let mut h = x;
        for (conv, norm) in &self.convs {
            h = harness.activate(norm.forward(p, conv.forward(p, h), harness));
        }
        let (n0, fc0, n1, fc1) = &self.tdf;
        let t = harness.activate(n0.forward(p, h, harness)).band_linear(p.var(fc0.w), p.var(fc0.b));
        let t = harness.activate(n1.forward(p, t, harness)).band_linear(p.var(fc1.w), p.var(fc1.b));
        h.add(t).add(self.skip.forward(p, x))
    }
}

/// Grouped transposed convolution over time, kernel = stride = `factor`.
#[derive(Clone, Debug, PartialEq)]
struct Upsample {
    w: ParamId,
    b: ParamId,
    groups: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Fusion {
    skip: usize,
    proj: Conv,
    factor: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderStage {
    up: Upsample,
    level: usize,
    fusions: Vec<Fusion>,
    block: SplitTfcBlock,
}

/// Encoder outputs: pre-downsample skips (layer `n` has `n·g` channels) and
/// the bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub skips: Vec<Tensor>,
    pub bottleneck: Tensor,
}

/// Tensor shapes through the network for a given frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTrace {
    pub banded: [usize; 3],
    pub lifted: [usize; 3],
    pub skips: Vec<[usize; 3]>,
    pub encoder: Vec<[usize; 3]>,
    pub bottleneck: [usize; 3],
    pub decoder: Vec<[usize; 3]>,
    pub output: [usize; 3],
}

/// Layer layout and parameter declarations of a model, without values.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    model: ModelConfig,
    stft: StftConfig,
    specs: Vec<ParamSpec>,
    lift_in: Conv,
    encoder: Vec<(SplitTfcBlock, Conv)>,
    bottleneck: Option<SplitTfcBlock>,
    seq: SeqModel,
    decoder: Vec<DecoderStage>,
    lift_out: Conv,
}

/// Decoder levels: stage `j` upsamples from `levels[j]` to `levels[j + 1]`.
fn decoder_levels(n_enc: usize, n_dec: usize) -> Vec<usize> {
    (0..=n_dec).map(|j| if j == n_dec { 0 } else { n_enc - j }).collect()
}

impl Architecture {
    pub fn new(model: &ModelConfig, stft: &StftConfig) -> Result<Self> {
        stft.validate()?;
        model.validate(stft)?;
        let mut d = Declarations::default();
        let (g, nb) = (model.g, model.n_band);
        let bins = model.bins_per_band(stft.kept_bins);
        let lift_in = Conv::declare(&mut d, "lift_in", model.band_channels(), g, nb, model.k_outer, true);
        let encoder = (1..=model.n_enc)
            .map(|n| {
                let c = n * g;
                let block = SplitTfcBlock::declare(&mut d, &format!("enc{n}.block"), c, model.n_split_enc, model, bins);
                let down = Conv::declare_down(&mut d, &format!("enc{n}.down"), c, c + g, nb, 2);
                (block, down)
            })
            .collect();
        let cb = model.bottleneck_channels();
        let bottleneck = model
            .bottleneck_block
            .then(|| SplitTfcBlock::declare(&mut d, "bottleneck", cb, 1, model, bins));
        let seq = SeqModel::declare(&mut d, "seq", cb, model.seq_width(), model.heads, model.n_rope, model.ffn_factor)?;
        let levels = decoder_levels(model.n_enc, model.n_dec);
        let decoder = (0..model.n_dec)
            .map(|j| {
                let (from, to) = (levels[j], levels[j + 1]);
                let (c_in, c_out) = ((from + 1) * g, (to + 1) * g);
                let factor = 1 << (from - to);
                let up = Upsample {
                    w: d.declare(format!("dec{j}.up.w"), &[c_in, c_out / nb, factor], Init::Uniform { fan_in: c_in / nb }),
                    b: d.declare(format!("dec{j}.up.b"), &[c_out], Init::Zeros),
                    groups: nb,
                };
                let fusions = (1..=model.n_enc)
                    .filter(|&n| to < n && n <= from)
                    .map(|n| Fusion {
                        skip: n - 1,
                        proj: Conv::declare(&mut d, &format!("dec{j}.fuse{n}"), n * g, c_out, 1, 1, true),
                        factor: 1 << (n - 1 - to),
                    })
                    .collect();
                let block = SplitTfcBlock::declare(&mut d, &format!("dec{j}.block"), c_out, model.n_split_dec, model, bins);
                DecoderStage { up, level: to, fusions, block }
            })
            .collect();
        let lift_out = Conv::declare(&mut d, "lift_out", g, model.band_channels(), nb, model.k_outer, true);
        Ok(Architecture {
            model: model.clone(),
            stft: stft.clone(),
            specs: d.into_specs(),
            lift_in,
            encoder,
            bottleneck,
            seq,
            decoder,
            lift_out,
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Frame counts per encoder level; level `n` has `ceil(T / 2^n)` frames.
    fn level_frames(&self, frames: usize) -> Result<Vec<usize>> {
        let need = 1usize << self.model.n_enc;
        if frames < need {
            return Err(Error::InputTooShort(format!("{frames} frames, the encoder needs at least {need}")));
        }
        let mut v = vec![frames];
        for _ in 0..self.model.n_enc {
            v.push(v.last().unwrap().div_ceil(2));
        }
        Ok(v)
    }

    pub fn trace_shapes(&self, frames: usize) -> Result<ShapeTrace> {
        let lf = self.level_frames(frames)?;
        let (g, fb) = (self.model.g, self.model.bins_per_band(self.stft.kept_bins));
        let c4 = self.model.band_channels();
        Ok(ShapeTrace {
            banded: [c4, fb, frames],
            lifted: [g, fb, frames],
            skips: (1..=self.model.n_enc).map(|n| [n * g, fb, lf[n - 1]]).collect(),
            encoder: (1..=self.model.n_enc).map(|n| [(n + 1) * g, fb, lf[n]]).collect(),
            bottleneck: [self.model.bottleneck_channels(), fb, lf[self.model.n_enc]],
            decoder: self.decoder.iter().map(|s| [(s.level + 1) * g, fb, lf[s.level]]).collect(),
            output: [c4, fb, frames],
        })
    }

    fn check_banded(&self, x: &[usize]) -> Result<()> {
        let want = [self.model.band_channels(), self.model.bins_per_band(self.stft.kept_bins)];
        if x.len() != 3 || x[..2] != want {
            return Err(Error::Shape(format!("expected ({}, {}, T) banded input, got {x:?}", want[0], want[1])));
        }
        Ok(())
    }

    pub fn lift_in<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        self.check_banded(&x.shape())?;
        Ok(self.lift_in.forward(p, x))
    }

    /// Returns (skips, bottleneck) for a `(g, Fb, T)` input.
    pub fn encoder<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Result<(Vec<Var<'g>>, Var<'g>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.model.g {
            return Err(Error::Shape(format!("encoder expects {} channels, got {shape:?}", self.model.g)));
        }
        self.level_frames(shape[2])?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (block, down) in &self.encoder {
            h = block.forward(p, h, harness);
            skips.push(h);
            h = down.forward(p, h);
        }
        Ok((skips, h))
    }

    /// Decodes a processed bottleneck back to `(4·n_band, Fb, T)`.
    pub fn decoder<'g>(&self, p: &Bound<'g>, bottleneck: Var<'g>, skips: &[Var<'g>], harness: &Harness) -> Result<Var<'g>> {
        if skips.len() != self.model.n_enc {
            return Err(Error::Shape(format!("decoder needs {} skips, got {}", self.model.n_enc, skips.len())));
        }
        let lf = self.level_frames(skips[0].shape()[2])?;
        for (n, s) in skips.iter().enumerate() {
            let want = [(n + 1) * self.model.g, self.model.bins_per_band(self.stft.kept_bins), lf[n]];
            if s.shape() != want {
                return Err(Error::Shape(format!("skip {} has shape {:?}, expected {want:?}", n + 1, s.shape())));
            }
        }
        let want = self.trace_shapes(lf[0])?.bottleneck;
        if bottleneck.shape() != want {
            return Err(Error::Shape(format!("bottleneck has shape {:?}, expected {want:?}", bottleneck.shape())));
        }
        let mut h = bottleneck;
        for stage in &self.decoder {
            let out_t = lf[stage.level];
            h = h.conv_transpose_time(p.var(stage.up.w), Some(p.var(stage.up.b)), stage.up.groups, out_t);
            for f in &stage.fusions {
                h = h.add(f.proj.forward(p, skips[f.skip]).repeat_time(f.factor, out_t));
            }
            h = stage.block.forward(p, h, harness);
        }
        Ok(self.lift_out.forward(p, h))
    }

    /// `(4, kept_bins, T)` spectrogram tensor → estimate of the same shape.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.model.c_in || shape[1] != self.stft.kept_bins {
            return Err(Error::Shape(format!(
                "expected ({}, {}, T) spectrogram, got {shape:?}",
                self.model.c_in, self.stft.kept_bins
            )));
        }
        let h = self.lift_in(p, split_var(x, self.model.n_band))?;
        let (skips, mut h) = self.encoder(p, h, harness)?;
        if let Some(block) = &self.bottleneck {
            h = block.forward(p, h, harness);
        }
        let h = self.seq.forward(p, h, harness);
        let y = self.decoder(p, h, &skips, harness)?;
        Ok(merge_var(y, self.model.n_band))
    }
}

/// Exact trainable scalar count of the single-stem model.
pub fn count_parameters(model: &ModelConfig, stft: &StftConfig) -> Result<usize> {
    Ok(Architecture::new(model, stft)?.param_count())
}

/// An architecture with parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: ParamStore,
    harness: Harness,
}

impl Network {
    pub fn new(model: &ModelConfig, stft: &StftConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(model, stft)?;
        let params = ParamStore::initialize(arch.param_specs(), seed);
        Ok(Network { arch, params, harness: Harness::default() })
    }

    /// Attaches existing values; names and shapes must match the declarations.
    pub fn from_params(model: &ModelConfig, stft: &StftConfig, params: ParamStore) -> Result<Self> {
        let arch = Architecture::new(model, stft)?;
        if params.len() != arch.specs.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", arch.specs.len(), params.len())));
        }
        for ((spec, name), t) in arch.specs.iter().zip(params.names()).zip(params.tensors()) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match declared {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(Network { arch, params, harness: Harness::default() })
    }

    pub fn with_harness(mut self, harness: Harness) -> Self {
        self.harness = harness;
        self
    }

    pub fn harness(&self) -> Harness {
        self.harness
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.arch.model
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.arch.stft
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Differentiable forward pass on `graph`.
    pub fn forward_var<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        self.arch.forward(p, x, &self.harness)
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::inference();
        let p = self.params.bind(&g);
        let y = self.forward_var(&p, g.leaf(x.clone()))?;
        Ok((*y.value()).clone())
    }

    pub fn model_forward(&self, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        if spec.meta != self.arch.stft {
            return Err(Error::Shape("spectrogram STFT settings differ from the model's".into()));
        }
        let y = self.forward_tensor(&spec.data)?;
        ComplexSpectrogram::new(y, spec.meta.clone(), spec.original_length)
    }

    pub fn lift_in(&self, x: &BandedTensor) -> Result<BandedTensor> {
        let g = Graph::inference();
        let p = self.params.bind(&g);
        let y = self.arch.lift_in(&p, g.leaf(x.data.clone()))?;
        BandedTensor::new((*y.value()).clone(), self.arch.model.n_band)
    }

    /// `x`: lifted `(g, Fb, T)` tensor.
    pub fn encoder_forward(&self, x: &Tensor) -> Result<EncoderState> {
        let g = Graph::inference();
        let p = self.params.bind(&g);
        let (skips, b) = self.arch.encoder(&p, g.leaf(x.clone()), &self.harness)?;
        Ok(EncoderState { skips: skips.iter().map(|s| (*s.value()).clone()).collect(), bottleneck: (*b.value()).clone() })
    }

    pub fn decoder_forward(&self, bottleneck: &Tensor, skips: &[Tensor]) -> Result<BandedTensor> {
        let g = Graph::inference();
        let p = self.params.bind(&g);
        let skips: Vec<Var> = skips.iter().map(|s| g.leaf(s.clone())).collect();
        let y = self.arch.decoder(&p, g.leaf(bottleneck.clone()), &skips, &self.harness)?;
        BandedTensor::new((*y.value()).clone(), self.arch.model.n_band)
    }

    /// Same layout with every parameter set to zero.
    pub fn zeroed(&self) -> Network {
        Network { params: self.params.map(|t| Tensor::zeros(t.shape())), ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn tiny() -> (ModelConfig, StftConfig) {
        let model = ModelConfig {
            n_band: 2,
            n_enc: 2,
            n_dec: 1,
            n_rope: 1,
            n_split_enc: 2,
            n_split_dec: 1,
            g: 8,
            seq_dim: Some(8),
            heads: 2,
            ..ModelConfig::default()
        };
        let stft = StftConfig { window_size: 64, hop: 16, kept_bins: 32, ..StftConfig::default() };
        (model, stft)
    }

    fn sc(i: usize, o: usize, kf: usize, kt: usize, nb: usize) -> usize {
        i * o * kf * kt / nb + o
    }

    /// Closed-form layer sum, written independently of the declarations.
    fn formula(m: &ModelConfig, kept_bins: usize) -> usize {
        let (g, nb) = (m.g, m.n_band);
        let fb = kept_bins / nb;
        let h = (fb / m.tdf_factor).max(1);
        let block = |c: usize, ns: usize| {
            let tdf = 2 * c + nb * (fb * h + h + h * fb + fb) + 2 * c;
            ns * (2 * c + c * c / nb + c) + tdf + c * c + c
        };
        let cb = (m.n_enc + 1) * g;
        let d = m.seq_dim.unwrap_or(cb);
        let f = m.ffn_factor;
        let mut total = sc(4 * nb, g, m.k_outer, m.k_outer, nb);
        for n in 1..=m.n_enc {
            total += block(n * g, m.n_split_enc) + sc(n * g, (n + 1) * g, 1, 2, nb);
        }
        if m.bottleneck_block {
            total += block(cb, 1);
        }
        total += cb * d + d + d * cb + cb;
        total += m.n_rope * (2 * (2 * d + 4 * d * d) + 2 * (2 * d + 2 * f * d * d + f * d + d));
        assert_eq!(m.n_dec, 1, "formula covers the single-stage decoder");
        total += sc(cb, g, 1, 1 << m.n_enc, nb);
        total += (1..=m.n_enc).map(|n| n * g * g + g).sum::<usize>();
        total += block(g, m.n_split_dec);
        total + sc(g, 4 * nb, m.k_outer, m.k_outer, nb)
    }

    #[test]
    fn zeroed_block_reduces_to_identity_skip() {
        let (m, _) = tiny();
        let mut decl = Declarations::default();
        let block = SplitTfcBlock::declare(&mut decl, "b", 8, 2, &m, 16);
        let mut store = ParamStore::initialize(decl.specs(), 1).map(|t| Tensor::zeros(t.shape()));
        let eye = store.get_mut(block.skip.w);
        for c in 0..8 {
            eye.data_mut()[c * 8 + c] = 1.0;
        }
        let x = Tensor::from_vec(&[8, 16, 5], (0..640).map(|i| (i as f64 * 0.71).sin()).collect());
        let g = Graph::inference();
        let p = store.bind(&g);
        let y = block.forward(&p, g.leaf(x.clone()), &Harness::default());
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn parameter_count_matches_formula() {
        let stft = StftConfig::default();
        for p in [Preset::Proposed, Preset::ProposedS] {
            let m = p.model();
            assert_eq!(count_parameters(&m, &stft).unwrap(), formula(&m, stft.kept_bins));
        }
        let (m, s) = tiny();
        assert_eq!(count_parameters(&m, &s).unwrap(), formula(&m, s.kept_bins));
        let with_block = ModelConfig { bottleneck_block: true, n_rope: 0, ..m };
        assert_eq!(count_parameters(&with_block, &s).unwrap(), formula(&with_block, s.kept_bins));
    }

    #[test]
    fn materialized_store_matches_declarations() {
        let (m, s) = tiny();
        let net = Network::new(&m, &s, 1).unwrap();
        assert_eq!(net.param_count(), count_parameters(&m, &s).unwrap());
    }

    #[test]
    fn proposed_shape_trace() {
        let arch = Architecture::new(&Preset::Proposed.model(), &StftConfig::default()).unwrap();
        let t = arch.trace_shapes(388).unwrap();
        assert_eq!(t.banded, [16, 512, 388]);
        assert_eq!(t.lifted, [56, 512, 388]);
        assert_eq!(t.bottleneck, [4 * 56, 2048 / 4, 388usize.div_ceil(8)]);
        assert_eq!(t.output, [16, 512, 388]);
        assert_eq!(t.encoder, vec![[112, 512, 194], [168, 512, 97], [224, 512, 49]]);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let (m, s) = tiny();
        let net = Network::new(&m, &s, 1).unwrap();
        let err = net.forward_tensor(&Tensor::zeros(&[4, 32, 3])).unwrap_err();
        assert!(matches!(err, Error::InputTooShort(_)));
    }

    #[test]
    fn multi_stage_decoder_builds_and_preserves_shape() {
        let (m, s) = tiny();
        let m = ModelConfig { n_dec: 2, ..m };
        let net = Network::new(&m, &s, 2).unwrap();
        let y = net.forward_tensor(&Tensor::full(&[4, 32, 7], 0.1)).unwrap();
        assert_eq!(y.shape(), &[4, 32, 7]);
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let (m, s) = tiny();
        let net = Network::new(&m, &s, 1).unwrap();
        let other = Network::new(&ModelConfig { g: 12, ..m.clone() }, &s, 1).unwrap();
        assert!(Network::from_params(&m, &s, other.params().clone()).is_err());
        assert!(Network::from_params(&m, &s, net.params().clone()).is_ok());
    }
}
