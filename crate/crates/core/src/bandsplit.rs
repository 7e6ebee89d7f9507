//! Equal-width subband splitting with channel stacking, grouped "split"
//! convolutions, and the inverse merge.
//!
//! A `(C, F, T)` tensor split into `n` bands becomes `(n·C, F/n, T)`: band `b`
//! (bins `[b·F/n, (b+1)·F/n)`) of every input channel occupies the channel
//! slice `[b·C, (b+1)·C)`. A convolution with `n` groups then sees each band
//! in isolation.

use crate::config::StftConfig;
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::ops::{self, ConvGeom};
use crate::spectral::ComplexSpectrogram;
use crate::tensor::Tensor;

/// A band-stacked tensor of shape `(n_band · channels_per_group, bins_per_band, frames)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedTensor {
    pub data: Tensor,
    pub n_band: usize,
    pub channels_per_group: usize,
}

impl BandedTensor {
    pub fn new(data: Tensor, n_band: usize) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::Shape(format!("banded tensor must be 3-d, got {:?}", data.shape())));
        }
        if n_band == 0 || data.dim(0) % n_band != 0 {
            return Err(Error::Shape(format!("{} channels do not split into {n_band} groups", data.dim(0))));
        }
        let channels_per_group = data.dim(0) / n_band;
        Ok(BandedTensor { data, n_band, channels_per_group })
    }

    pub fn channels(&self) -> usize {
        self.data.dim(0)
    }

    pub fn bins(&self) -> usize {
        self.data.dim(1)
    }

    pub fn frames(&self) -> usize {
        self.data.dim(2)
    }

    /// Channel range of group `b`.
    pub fn group(&self, b: usize) -> std::ops::Range<usize> {
        b * self.channels_per_group..(b + 1) * self.channels_per_group
    }
}

/// `(C, F, T)` → `(n·C, F/n, T)`. Panics unless `n` divides `F`.
pub fn split_tensor(x: &Tensor, n_band: usize) -> Tensor {
    let (c, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    assert!(f % n_band == 0, "{f} bins do not split into {n_band} bands");
    let fb = f / n_band;
    let mut out = Tensor::zeros(&[n_band * c, fb, t]);
    let row = fb * t;
    for b in 0..n_band {
        for ch in 0..c {
            let src = (ch * f + b * fb) * t;
            let dst = (b * c + ch) * row;
            out.data_mut()[dst..dst + row].copy_from_slice(&x.data()[src..src + row]);
        }
    }
    out
}

/// Inverse of [`split_tensor`]: `(n·C, Fb, T)` → `(C, n·Fb, T)`.
pub fn merge_tensor(x: &Tensor, n_band: usize) -> Tensor {
    let (cb, fb, t) = (x.dim(0), x.dim(1), x.dim(2));
    assert!(cb % n_band == 0, "{cb} channels do not merge from {n_band} bands");
    let c = cb / n_band;
    let f = n_band * fb;
    let mut out = Tensor::zeros(&[c, f, t]);
    let row = fb * t;
    for b in 0..n_band {
        for ch in 0..c {
            let src = (b * c + ch) * row;
            let dst = (ch * f + b * fb) * t;
            out.data_mut()[dst..dst + row].copy_from_slice(&x.data()[src..src + row]);
        }
    }
    out
}

pub fn band_split(spec: &ComplexSpectrogram, n_band: usize) -> Result<BandedTensor> {
    let bins = spec.data.dim(1);
    if n_band == 0 || bins % n_band != 0 {
        return Err(Error::Invariant(format!("kept_bins mod n_band != 0 (kept_bins={bins}, n_band={n_band})")));
    }
    BandedTensor::new(split_tensor(&spec.data, n_band), n_band)
}

/// Inverse of [`band_split`]. Only fully decoded tensors (4 channels per group) merge.
pub fn band_merge(banded: &BandedTensor, meta: &StftConfig, original_length: Option<usize>) -> Result<ComplexSpectrogram> {
    if banded.channels_per_group != 4 {
        return Err(Error::Shape(format!(
            "band_merge needs 4 channels per group, got {}",
            banded.channels_per_group
        )));
    }
    ComplexSpectrogram::new(merge_tensor(&banded.data, banded.n_band), meta.clone(), original_length)
}

pub fn split_var<'g>(x: Var<'g>, n_band: usize) -> Var<'g> {
    let out = split_tensor(&x.value(), n_band);
    x.graph().custom(out, &[x], move || Box::new(move |g: &Tensor| vec![Some(merge_tensor(g, n_band))]))
}

pub fn merge_var<'g>(x: Var<'g>, n_band: usize) -> Var<'g> {
    let out = merge_tensor(&x.value(), n_band);
    x.graph().custom(out, &[x], move || Box::new(move |g: &Tensor| vec![Some(split_tensor(g, n_band))]))
}

/// Trainable scalars of a split convolution.
pub fn split_conv_params(c_in: usize, c_out: usize, k: usize, n_band: usize, bias: bool) -> usize {
    c_in * c_out * k * k / n_band + if bias { c_out } else { 0 }
}

/// Weights of a grouped `k × k` convolution with one group per band.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitConv {
    /// `(c_out, c_in / n_band, k, k)`.
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub n_band: usize,
}

impl SplitConv {
    pub fn new(weight: Tensor, bias: Option<Tensor>, n_band: usize) -> Result<Self> {
        if weight.ndim() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0 {
            return Err(Error::Shape(format!("split conv weight must be (out, in/g, k, k) with odd k, got {:?}", weight.shape())));
        }
        if n_band == 0 || weight.dim(0) % n_band != 0 {
            return Err(Error::Invariant(format!("out_channels mod n_band != 0 ({} vs {n_band})", weight.dim(0))));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.dim(0)] {
                return Err(Error::Shape("split conv bias must have one entry per output channel".into()));
            }
        }
        Ok(SplitConv { weight, bias, n_band })
    }

    /// `k = 1` convolution that copies its input.
    pub fn identity(channels: usize, n_band: usize) -> Result<Self> {
        let cg = channels / n_band.max(1);
        let mut w = Tensor::zeros(&[channels, cg, 1, 1]);
        for co in 0..channels {
            w.data_mut()[co * cg + co % cg] = 1.0;
        }
        SplitConv::new(w, None, n_band)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1) * self.n_band
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn forward(&self, x: &BandedTensor) -> Result<BandedTensor> {
        if x.n_band != self.n_band || x.channels() != self.in_channels() {
            return Err(Error::Shape(format!(
                "split conv expects {} channels in {} groups, got {} in {}",
                self.in_channels(),
                self.n_band,
                x.channels(),
                x.n_band
            )));
        }
        let geom = ConvGeom::same(self.n_band, self.kernel(), x.frames());
        BandedTensor::new(ops::conv2d(&x.data, &self.weight, self.bias.as_ref(), &geom), self.n_band)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| (i as f64 * 0.37).sin()).collect())
    }

    #[test]
    fn split_places_band_b_in_group_b() {
        let x = ramp(&[4, 8, 3]);
        let y = split_tensor(&x, 2);
        assert_eq!(y.shape(), &[8, 4, 3]);
        for b in 0..2 {
            for ch in 0..4 {
                for f in 0..4 {
                    for t in 0..3 {
                        assert_eq!(y.at3(b * 4 + ch, f, t), x.at3(ch, b * 4 + f, t));
                    }
                }
            }
        }
    }

    #[test]
    fn proposed_shapes() {
        let meta = StftConfig::default();
        let spec = ComplexSpectrogram::new(Tensor::zeros(&[4, 2048, 5]), meta.clone(), None).unwrap();
        let banded = band_split(&spec, 4).unwrap();
        assert_eq!(banded.data.shape(), &[16, 512, 5]);
        assert_eq!(band_split(&spec, 1).unwrap().data.shape(), &[4, 2048, 5]);
        assert_eq!(band_merge(&banded, &meta, None).unwrap(), spec);
    }

    #[test]
    fn indivisible_bins_rejected() {
        let meta = StftConfig { kept_bins: 10, ..StftConfig::default() };
        let spec = ComplexSpectrogram::new(Tensor::zeros(&[4, 10, 2]), meta, None).unwrap();
        assert!(band_split(&spec, 4).is_err());
    }

    #[test]
    fn merge_requires_four_channels_per_group() {
        let b = BandedTensor::new(Tensor::zeros(&[6, 2, 2]), 2).unwrap();
        assert!(band_merge(&b, &StftConfig::default(), None).is_err());
    }

    #[test]
    fn example_parameter_count() {
        assert_eq!(split_conv_params(16, 56, 3, 4, true), 2072);
        let conv = SplitConv::new(Tensor::zeros(&[56, 4, 3, 3]), Some(Tensor::zeros(&[56])), 4).unwrap();
        assert_eq!(conv.param_count(), 2072);
    }

    #[test]
    fn identity_conv_copies_input() {
        let x = BandedTensor::new(ramp(&[8, 3, 5]), 4).unwrap();
        let conv = SplitConv::identity(8, 4).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn odd_kernel_and_divisibility_enforced() {
        assert!(SplitConv::new(Tensor::zeros(&[6, 2, 2, 2]), None, 2).is_err());
        assert!(SplitConv::new(Tensor::zeros(&[6, 2, 3, 3]), None, 4).is_err());
    }
}
