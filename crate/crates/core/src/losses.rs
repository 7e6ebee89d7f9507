//! Training objective: waveform L1 plus multi-resolution complex STFT MAE,
//! summed without weights.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::config::StftConfig;
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::spectral::{istft_var, stft_var, ComplexSpectrogram, Stft};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1_time: f64,
    pub multires: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l1_time: f64, multires: f64) -> Result<Self> {
        if !l1_time.is_finite() {
            return Err(Error::NonFinite("loss component l1_time".into()));
        }
        if !multires.is_finite() {
            return Err(Error::NonFinite("loss component multires".into()));
        }
        Ok(LossBreakdown { l1_time, multires, total: l1_time + multires })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("estimate has {a} samples, reference {b}")));
    }
    Ok(())
}

/// Mean absolute sample difference over both channels.
pub fn l1_time(est: &Waveform, reference: &Waveform) -> Result<f64> {
    check_lengths(est.len(), reference.len())?;
    if est.is_empty() {
        return Err(Error::InputTooShort("l1 of empty waveforms".into()));
    }
    let total: f64 = est.samples().zip(reference.samples()).map(|(a, b)| (f64::from(a) - f64::from(b)).abs()).sum();
    Ok(total / (2 * est.len()) as f64)
}

/// Resolutions whose window fits in `len` samples; warns about the others.
pub fn usable_resolutions(windows: &[[usize; 2]], len: usize) -> Result<Vec<[usize; 2]>> {
    let usable: Vec<[usize; 2]> = windows
        .iter()
        .copied()
        .filter(|&[w, h]| {
            let ok = w <= len;
            if !ok {
                log::warn!("multi-resolution loss: skipping window {w} (hop {h}) longer than {len} samples");
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::InputTooShort(format!("every loss resolution is longer than {len} samples")));
    }
    Ok(usable)
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64
}

/// Average over resolutions of the mean absolute difference between the
/// real and imaginary parts of the full-band STFTs.
pub fn multires_complex_mae(est: &Waveform, reference: &Waveform, windows: &[[usize; 2]]) -> Result<f64> {
    check_lengths(est.len(), reference.len())?;
    let usable = usable_resolutions(windows, est.len())?;
    let (e, r) = (est.to_tensor(), reference.to_tensor());
    let sum: f64 = usable
        .iter()
        .map(|&[w, h]| {
            let plan = Stft::full(w, h);
            mean_abs_diff(&plan.forward_tensor(&e), &plan.forward_tensor(&r))
        })
        .sum();
    Ok(sum / usable.len() as f64)
}

/// Synthesizes `est_spec` and scores it against the target stem.
pub fn total_loss(est_spec: &ComplexSpectrogram, target: &Waveform, windows: &[[usize; 2]]) -> Result<LossBreakdown> {
    let est = crate::spectral::istft(est_spec)?;
    LossBreakdown::new(l1_time(&est, target)?, multires_complex_mae(&est, target, windows)?)
}

pub fn l1_time_var<'g>(est: Var<'g>, target: Arc<Tensor>) -> Var<'g> {
    est.mean_abs_diff(target)
}

/// Differentiable multi-resolution loss of a `(C, len)` estimate.
pub fn multires_var<'g>(est: Var<'g>, target: &Tensor, windows: &[[usize; 2]]) -> Result<Var<'g>> {
    let len = target.dim(1);
    let usable = usable_resolutions(windows, len)?;
    let scale = 1.0 / usable.len() as f64;
    let mut acc: Option<Var<'g>> = None;
    for [w, h] in usable {
        let plan = Stft::full(w, h);
        let reference = Arc::new(plan.forward_tensor(target));
        let term = stft_var(est, plan).mean_abs_diff(reference).scale(scale);
        acc = Some(match acc {
            Some(a) => a.add(term),
            None => term,
        });
    }
    Ok(acc.expect("at least one resolution"))
}

/// Differentiable total loss of a packed `(4, bins, frames)` spectrogram
/// estimate against a `(2, len)` target waveform.
pub fn total_loss_var<'g>(
    est_spec: Var<'g>,
    target: &Tensor,
    stft: &StftConfig,
    windows: &[[usize; 2]],
) -> Result<(Var<'g>, LossBreakdown)> {
    let len = target.dim(1);
    let est = istft_var(est_spec, Stft::from_config(stft), len);
    let l1 = l1_time_var(est, Arc::new(target.clone()));
    let mr = multires_var(est, target, windows)?;
    let breakdown = LossBreakdown::new(l1.value().item(), mr.value().item())?;
    Ok((l1.add(mr), breakdown))
}
