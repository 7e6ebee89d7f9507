//! Short-time Fourier analysis/synthesis with bin truncation, and the packing
//! of stereo complex spectrograms into four real channels.
//!
//! Analysis uses a periodic Hann window with reflect padding of `window/2` on
//! both sides (centered frames). Synthesis zero-fills discarded bins and
//! divides the overlap-added frames by the summed squared window, so
//! `istft(stft(x))` reproduces the in-band content of `x`.
//!
//! Both transforms are linear; [`Stft`] also exposes their adjoints, which the
//! loss functions use for back-propagation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::config::StftConfig;
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// A planned STFT of fixed window, hop and kept-bin count.
pub struct Stft {
    n: usize,
    hop: usize,
    keep: usize,
    center: bool,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

type PlanKey = (usize, usize, usize, bool);

impl Stft {
    pub fn new(window: usize, hop: usize, keep: usize, center: bool) -> Self {
        assert!(window > 0 && hop > 0 && keep >= 1 && keep <= window / 2 + 1);
        let mut planner = FftPlanner::new();
        let w = (0..window).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / window as f64).cos()).collect();
        Stft {
            n: window,
            hop,
            keep,
            center,
            window: w,
            fwd: planner.plan_fft_forward(window),
            inv: planner.plan_fft_inverse(window),
        }
    }

    /// Process-wide cached plan.
    pub fn shared(window: usize, hop: usize, keep: usize, center: bool) -> Arc<Stft> {
        static CACHE: OnceLock<Mutex<HashMap<PlanKey, Arc<Stft>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut map = cache.lock().expect("stft plan cache poisoned");
        map.entry((window, hop, keep, center))
            .or_insert_with(|| Arc::new(Stft::new(window, hop, keep, center)))
            .clone()
    }

    pub fn from_config(cfg: &StftConfig) -> Arc<Stft> {
        Stft::shared(cfg.window_size, cfg.hop, cfg.kept_bins, cfg.center)
    }

    /// All bins kept (used by the multi-resolution loss).
    pub fn full(window: usize, hop: usize) -> Arc<Stft> {
        Stft::shared(window, hop, window / 2 + 1, true)
    }

    pub fn window_size(&self) -> usize {
        self.n
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.keep
    }

    fn pad(&self) -> usize {
        if self.center {
            self.n / 2
        } else {
            0
        }
    }

    pub fn frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded < self.n {
            0
        } else {
            1 + (padded - self.n) / self.hop
        }
    }

    /// Source index of padded position `p` (reflect padding).
    fn source_index(&self, p: usize, len: usize) -> usize {
        let i = p as isize - self.pad() as isize;
        if len == 1 {
            return 0;
        }
        let period = 2 * (len as isize - 1);
        let mut m = i.rem_euclid(period);
        if m >= len as isize {
            m = period - m;
        }
        m as usize
    }

    /// Analysis of one channel. Returns (re, im), each laid out `[bin][frame]`.
    pub fn analyze(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let len = x.len();
        let frames = self.frames(len);
        let cols: Vec<Vec<Complex64>> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let mut buf: Vec<Complex64> = (0..self.n)
                    .map(|i| Complex64::new(x[self.source_index(t * self.hop + i, len)] * self.window[i], 0.0))
                    .collect();
                self.fwd.process(&mut buf);
                buf.truncate(self.keep);
                buf
            })
            .collect();
        let mut re = vec![0.0; self.keep * frames];
        let mut im = vec![0.0; self.keep * frames];
        for (t, col) in cols.iter().enumerate() {
            for (k, z) in col.iter().enumerate() {
                re[k * frames + t] = z.re;
                im[k * frames + t] = z.im;
            }
        }
        (re, im)
    }

    /// Adjoint of [`Stft::analyze`]: maps coefficient gradients back to the signal.
    pub fn analyze_adjoint(&self, gre: &[f64], gim: &[f64], len: usize) -> Vec<f64> {
        let frames = self.frames(len);
        let segs: Vec<Vec<f64>> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
                for k in 0..self.keep {
                    buf[k] = Complex64::new(gre[k * frames + t], gim[k * frames + t]);
                }
                self.inv.process(&mut buf);
                buf.iter().zip(&self.window).map(|(z, w)| z.re * w).collect()
            })
            .collect();
        let mut gx = vec![0.0; len];
        for (t, seg) in segs.iter().enumerate() {
            for (i, v) in seg.iter().enumerate() {
                gx[self.source_index(t * self.hop + i, len)] += v;
            }
        }
        gx
    }

    fn conj_symmetric(&self, k: usize) -> bool {
        k == 0 || 2 * k == self.n
    }

    fn envelope(&self, frames: usize) -> Vec<f64> {
        let total = (frames.max(1) - 1) * self.hop + self.n;
        let mut env = vec![0.0; total];
        for t in 0..frames {
            for (i, w) in self.window.iter().enumerate() {
                env[t * self.hop + i] += w * w;
            }
        }
        env
    }

    /// Synthesis of one channel from `[bin][frame]` coefficients, cropped to `len`.
    pub fn synthesize(&self, re: &[f64], im: &[f64], frames: usize, len: usize) -> Vec<f64> {
        let segs: Vec<Vec<f64>> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
                for k in 0..self.keep {
                    let z = if self.conj_symmetric(k) {
                        Complex64::new(re[k * frames + t], 0.0)
                    } else {
                        Complex64::new(re[k * frames + t], im[k * frames + t])
                    };
                    buf[k] = z;
                    if !self.conj_symmetric(k) {
                        buf[self.n - k] = z.conj();
                    }
                }
                self.inv.process(&mut buf);
                let scale = 1.0 / self.n as f64;
                buf.iter().zip(&self.window).map(|(z, w)| z.re * scale * w).collect()
            })
            .collect();
        let env = self.envelope(frames);
        let mut acc = vec![0.0; env.len()];
        for (t, seg) in segs.iter().enumerate() {
            for (i, v) in seg.iter().enumerate() {
                acc[t * self.hop + i] += v;
            }
        }
        let off = self.pad();
        (0..len)
            .map(|i| {
                let p = i + off;
                if p < env.len() && env[p] > 1e-10 {
                    acc[p] / env[p]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Adjoint of [`Stft::synthesize`].
    pub fn synthesize_adjoint(&self, gy: &[f64], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let env = self.envelope(frames);
        let off = self.pad();
        let mut gacc = vec![0.0; env.len()];
        for (i, g) in gy.iter().enumerate() {
            let p = i + off;
            if p < env.len() && env[p] > 1e-10 {
                gacc[p] = g / env[p];
            }
        }
        let cols: Vec<Vec<Complex64>> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let mut buf: Vec<Complex64> = (0..self.n)
                    .map(|i| Complex64::new(gacc[t * self.hop + i] * self.window[i], 0.0))
                    .collect();
                self.fwd.process(&mut buf);
                buf.truncate(self.keep);
                buf
            })
            .collect();
        let mut gre = vec![0.0; self.keep * frames];
        let mut gim = vec![0.0; self.keep * frames];
        let inv_n = 1.0 / self.n as f64;
        for (t, col) in cols.iter().enumerate() {
            for (k, z) in col.iter().enumerate() {
                if self.conj_symmetric(k) {
                    gre[k * frames + t] = z.re * inv_n;
                } else {
                    gre[k * frames + t] = 2.0 * z.re * inv_n;
                    gim[k * frames + t] = 2.0 * z.im * inv_n;
                }
            }
        }
        (gre, gim)
    }

    /// Multichannel analysis: `(C, len)` → `(2C, bins, frames)` with channels
    /// ordered `[c0.re, c0.im, c1.re, c1.im, ...]`.
    pub fn forward_tensor(&self, x: &Tensor) -> Tensor {
        let (c, len) = (x.dim(0), x.dim(1));
        let frames = self.frames(len);
        let plane = self.keep * frames;
        let mut out = Tensor::zeros(&[2 * c, self.keep, frames]);
        for ch in 0..c {
            let (re, im) = self.analyze(&x.data()[ch * len..(ch + 1) * len]);
            out.data_mut()[2 * ch * plane..(2 * ch + 1) * plane].copy_from_slice(&re);
            out.data_mut()[(2 * ch + 1) * plane..(2 * ch + 2) * plane].copy_from_slice(&im);
        }
        out
    }

    pub fn forward_tensor_adjoint(&self, g: &Tensor, len: usize) -> Tensor {
        let c = g.dim(0) / 2;
        let plane = g.dim(1) * g.dim(2);
        let mut out = Tensor::zeros(&[c, len]);
        for ch in 0..c {
            let gre = &g.data()[2 * ch * plane..(2 * ch + 1) * plane];
            let gim = &g.data()[(2 * ch + 1) * plane..(2 * ch + 2) * plane];
            out.data_mut()[ch * len..(ch + 1) * len].copy_from_slice(&self.analyze_adjoint(gre, gim, len));
        }
        out
    }

    /// Inverse of [`Stft::forward_tensor`] on kept bins: `(2C, bins, frames)` → `(C, len)`.
    pub fn inverse_tensor(&self, s: &Tensor, len: usize) -> Tensor {
        let (c2, frames) = (s.dim(0), s.dim(2));
        let plane = self.keep * frames;
        let mut out = Tensor::zeros(&[c2 / 2, len]);
        for ch in 0..c2 / 2 {
            let re = &s.data()[2 * ch * plane..(2 * ch + 1) * plane];
            let im = &s.data()[(2 * ch + 1) * plane..(2 * ch + 2) * plane];
            out.data_mut()[ch * len..(ch + 1) * len].copy_from_slice(&self.synthesize(re, im, frames, len));
        }
        out
    }

    pub fn inverse_tensor_adjoint(&self, g: &Tensor, frames: usize) -> Tensor {
        let (c, len) = (g.dim(0), g.dim(1));
        let plane = self.keep * frames;
        let mut out = Tensor::zeros(&[2 * c, self.keep, frames]);
        for ch in 0..c {
            let (gre, gim) = self.synthesize_adjoint(&g.data()[ch * len..(ch + 1) * len], frames);
            out.data_mut()[2 * ch * plane..(2 * ch + 1) * plane].copy_from_slice(&gre);
            out.data_mut()[(2 * ch + 1) * plane..(2 * ch + 2) * plane].copy_from_slice(&gim);
        }
        out
    }
}

/// Differentiable analysis of a `(C, len)` signal.
pub fn stft_var<'g>(x: Var<'g>, stft: Arc<Stft>) -> Var<'g> {
    let xv = x.value();
    let len = xv.dim(1);
    let out = stft.forward_tensor(&xv);
    x.graph().custom(out, &[x], move || Box::new(move |g: &Tensor| vec![Some(stft.forward_tensor_adjoint(g, len))]))
}

/// Differentiable synthesis of a `(2C, bins, frames)` spectrogram.
pub fn istft_var<'g>(s: Var<'g>, stft: Arc<Stft>, len: usize) -> Var<'g> {
    let sv = s.value();
    let frames = sv.dim(2);
    let out = stft.inverse_tensor(&sv, len);
    s.graph().custom(out, &[s], move || {
        Box::new(move |g: &Tensor| vec![Some(stft.inverse_tensor_adjoint(g, frames))])
    })
}

/// A stereo STFT packed as real channels `[L.re, L.im, R.re, R.im]` of shape
/// `(4, kept_bins, frames)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Tensor,
    pub meta: StftConfig,
    pub original_length: Option<usize>,
}

impl ComplexSpectrogram {
    pub fn new(data: Tensor, meta: StftConfig, original_length: Option<usize>) -> Result<Self> {
        if data.ndim() != 3 || data.dim(0) != 4 {
            return Err(Error::Shape(format!("spectrogram needs 4 channels, got shape {:?}", data.shape())));
        }
        if data.dim(1) != meta.kept_bins {
            return Err(Error::Shape(format!("spectrogram has {} bins, config keeps {}", data.dim(1), meta.kept_bins)));
        }
        Ok(ComplexSpectrogram { data, meta, original_length })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.data.dim(0), self.data.dim(1), self.data.dim(2))
    }

    pub fn frames(&self) -> usize {
        self.data.dim(2)
    }

    pub fn zeros_like(&self) -> Self {
        ComplexSpectrogram { data: Tensor::zeros(self.data.shape()), ..self.clone() }
    }
}

/// Complex STFT of both channels, each laid out `[bin][frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoStft {
    pub channels: [Vec<Complex64>; 2],
    pub bins: usize,
    pub frames: usize,
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if wave.is_empty() {
        return Err(Error::InputTooShort("stft of an empty waveform".into()));
    }
    if !wave.is_finite() {
        return Err(Error::NonFinite("stft input waveform".into()));
    }
    let plan = Stft::from_config(cfg);
    let data = plan.forward_tensor(&wave.to_tensor());
    ComplexSpectrogram::new(data, cfg.clone(), Some(wave.len()))
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let len = spec
        .original_length
        .ok_or_else(|| Error::Shape("istft needs the original signal length".into()))?;
    let plan = Stft::from_config(&spec.meta);
    Waveform::from_tensor(&plan.inverse_tensor(&spec.data, len))
}

pub fn pack(z: &StereoStft, meta: &StftConfig, original_length: Option<usize>) -> Result<ComplexSpectrogram> {
    let plane = z.bins * z.frames;
    if z.channels.iter().any(|c| c.len() != plane) {
        return Err(Error::Shape("stereo STFT channel length does not match bins x frames".into()));
    }
    let mut data = Tensor::zeros(&[4, z.bins, z.frames]);
    for (c, ch) in z.channels.iter().enumerate() {
        for (i, v) in ch.iter().enumerate() {
            data.data_mut()[2 * c * plane + i] = v.re;
            data.data_mut()[(2 * c + 1) * plane + i] = v.im;
        }
    }
    ComplexSpectrogram::new(data, meta.clone(), original_length)
}

pub fn unpack(spec: &ComplexSpectrogram) -> Result<StereoStft> {
    let (c, bins, frames) = spec.shape();
    if c != 4 {
        return Err(Error::Shape(format!("unpack needs 4 channels, got {c}")));
    }
    let plane = bins * frames;
    let d = spec.data.data();
    let channels = std::array::from_fn(|ch| {
        (0..plane).map(|i| Complex64::new(d[2 * ch * plane + i], d[(2 * ch + 1) * plane + i])).collect()
    });
    Ok(StereoStft { channels, bins, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn small() -> StftConfig {
        StftConfig { window_size: 64, hop: 16, kept_bins: 33, sample_rate: 44100, center: true }
    }

    #[test]
    fn frame_count_matches_formula() {
        let cfg = StftConfig::default();
        let plan = Stft::from_config(&cfg);
        assert_eq!(plan.frames(264_600), 259);
        assert_eq!(plan.frames(396_900), 388);
        assert_eq!(plan.frames(1), 1);
    }

    #[test]
    fn full_band_roundtrip_is_exact() {
        let cfg = small();
        let w = Waveform::from_fn(300, |c, i| ((i * 7 + c * 3) % 11) as f32 / 11.0 - 0.5);
        let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
        for (a, b) in back.samples().zip(w.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Away from the ends the truncated round trip of a low tone is exact to
    /// float precision. Within half a window of either end the reflected
    /// boundary has a slope kink whose content above the cutoff is lost.
    #[test]
    fn truncated_roundtrip_of_a_low_tone() {
        let cfg = StftConfig::default();
        let x = Waveform::from_fn(6 * 44100, |c, i| {
            (0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 44100.0 + c as f64).sin()) as f32
        });
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        let edge = cfg.window_size / 2;
        for c in 0..2 {
            for i in edge..x.len() - edge {
                assert!((x.channel(c)[i] - y.channel(c)[i]).abs() < 1e-4, "sample {i}");
            }
        }
    }

    #[test]
    fn noise_roundtrip_error_lies_above_the_cutoff() {
        let cfg = StftConfig { window_size: 128, hop: 32, kept_bins: 40, ..StftConfig::default() };
        let x = Waveform::from_fn(4096, |c, i| (((i * 7919 + c * 104729) % 1000) as f32 / 500.0) - 1.0);
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        let err = Waveform::from_fn(x.len(), |c, i| x.channel(c)[i] - y.channel(c)[i]);
        let full = Stft::full(128, 32);
        let (re, im) = full.analyze(&err.channel(0).iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let (xr, xi) = full.analyze(&x.channel(0).iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let frames = full.frames(x.len());
        let band_energy = |r: &[f64], i: &[f64], bins: std::ops::Range<usize>| -> f64 {
            bins.flat_map(|k| (4..frames - 4).map(move |t| k * frames + t)).map(|j| r[j] * r[j] + i[j] * i[j]).sum()
        };
        // Three bins of guard for the window's main lobe.
        let low_err = band_energy(&re, &im, 0..cfg.kept_bins - 3);
        let low_sig = band_energy(&xr, &xi, 0..cfg.kept_bins - 3);
        let high_err = band_energy(&re, &im, cfg.kept_bins + 3..65);
        assert!(low_err < 1e-6 * low_sig, "{low_err} vs {low_sig}");
        assert!(high_err > 1e3 * low_err);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let w = Waveform::new(vec![0.0, f32::NAN], vec![0.0, 0.0]);
        assert!(matches!(stft(&w, &small()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn istft_requires_length() {
        let mut s = stft(&Waveform::zeros(100), &small()).unwrap();
        s.original_length = None;
        assert!(istft(&s).is_err());
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 12.9898).sin() * 43758.5453 % 1.0).collect()
    }

    #[test]
    fn analysis_adjoint_identity() {
        for &(n, hop, keep, len) in &[(16usize, 4usize, 9usize, 37usize), (16, 4, 5, 37), (15, 5, 8, 6)] {
            let plan = Stft::new(n, hop, keep, true);
            let x = pseudo(len, 1.0);
            let frames = plan.frames(len);
            let gre = pseudo(keep * frames, 2.0);
            let gim = pseudo(keep * frames, 3.0);
            let (re, im) = plan.analyze(&x);
            let lhs = dot(&re, &gre) + dot(&im, &gim);
            let rhs = dot(&x, &plan.analyze_adjoint(&gre, &gim, len));
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn synthesis_adjoint_identity() {
        for &(n, hop, keep, len) in &[(16usize, 4usize, 9usize, 37usize), (16, 4, 6, 40), (15, 5, 8, 23)] {
            let plan = Stft::new(n, hop, keep, true);
            let frames = plan.frames(len);
            let re = pseudo(keep * frames, 4.0);
            let im = pseudo(keep * frames, 5.0);
            let gy = pseudo(len, 6.0);
            let y = plan.synthesize(&re, &im, frames, len);
            let (gre, gim) = plan.synthesize_adjoint(&gy, frames);
            let lhs = dot(&y, &gy);
            let rhs = dot(&re, &gre) + dot(&im, &gim);
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn graph_ops_match_plain_transforms() {
        let plan = Stft::shared(32, 8, 12, true);
        let x = Tensor::from_vec(&[2, 50], pseudo(100, 7.0));
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let s = stft_var(xv, plan.clone());
        assert_eq!(*s.value(), plan.forward_tensor(&x));
        let y = istft_var(s, plan.clone(), 50);
        assert_eq!(y.shape(), vec![2, 50]);
    }

    #[test]
    fn pack_unpack_inverse() {
        let cfg = small();
        let s = stft(&Waveform::from_fn(120, |c, i| (i as f32 * 0.1 + c as f32).sin()), &cfg).unwrap();
        let z = unpack(&s).unwrap();
        assert_eq!(pack(&z, &cfg, s.original_length).unwrap(), s);
    }
}
