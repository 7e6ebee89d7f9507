//! Training-time augmentation: random stem remixing across a batch, random
//! gain, polarity inversion, pitch shift, circular time shift and channel
//! flip.
//!
//! Transforms act on individual stems; a [`StemSet`]'s mixture is always the
//! sum of its stems, so it stays consistent after every draw.

use rand::Rng;

use crate::audio::{StemSet, Waveform};
use crate::config::AugmentSpec;
use crate::error::{Error, Result};

/// Analysis window of the pitch shifter's overlap-add stretch.
pub const PITCH_WINDOW: usize = 1024;
const PITCH_HOP: usize = PITCH_WINDOW / 4;

pub fn polarity_invert(w: &Waveform) -> Waveform {
    w.map(|x| -x)
}

pub fn channel_flip(w: &Waveform) -> Waveform {
    let [l, r] = w.clone().into_channels();
    Waveform::new(r, l)
}

pub fn apply_gain(w: &Waveform, db: f64) -> Waveform {
    let g = 10f64.powf(db / 20.0);
    w.map(|x| (f64::from(x) * g) as f32)
}

pub fn random_gain<R: Rng + ?Sized>(w: &Waveform, range_db: [f64; 2], rng: &mut R) -> Waveform {
    apply_gain(w, uniform(rng, range_db))
}

/// Circular rotation: sample `i` moves to `i + n` (mod length).
pub fn circular_shift(w: &Waveform, n: isize) -> Waveform {
    let len = w.len();
    if len == 0 {
        return w.clone();
    }
    let s = n.rem_euclid(len as isize) as usize;
    let rot = |ch: &[f32]| {
        let mut v = ch.to_vec();
        v.rotate_right(s);
        v
    };
    Waveform::new(rot(w.channel(0)), rot(w.channel(1)))
}

pub fn temporal_shift<R: Rng + ?Sized>(w: &Waveform, range_seconds: [f64; 2], sample_rate: u32, rng: &mut R) -> Waveform {
    let n = (uniform(rng, range_seconds) * f64::from(sample_rate)).round() as isize;
    circular_shift(w, n)
}

/// Search radius for the waveform-similarity alignment of analysis frames.
const PITCH_TOLERANCE: isize = 128;

fn sample(x: &[f32], i: isize) -> f64 {
    if i >= 0 && (i as usize) < x.len() {
        f64::from(x[i as usize])
    } else {
        0.0
    }
}

/// Waveform-similarity overlap-add stretch of one channel to
/// `round(len · ratio)` samples. Each analysis frame is moved within
/// `±PITCH_TOLERANCE` to best continue the previously copied frame, which
/// keeps periodic content phase-coherent across frames.
fn stretch(x: &[f32], ratio: f64) -> Vec<f64> {
    let n = x.len();
    let out_len = ((n as f64) * ratio).round().max(1.0) as usize;
    let win: Vec<f64> = (0..PITCH_WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / PITCH_WINDOW as f64).cos())
        .collect();
    let half = (PITCH_WINDOW / 2) as isize;
    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let frames = out_len / PITCH_HOP + 2;
    let mut prev: Option<isize> = None;
    for m in 0..frames {
        let syn = (m * PITCH_HOP) as isize - half;
        let nominal = ((m * PITCH_HOP) as f64 / ratio).round() as isize - half;
        let ana = match prev {
            None => nominal,
            Some(p) => {
                let target = p + PITCH_HOP as isize;
                let mut best = (f64::NEG_INFINITY, nominal);
                for d in -PITCH_TOLERANCE..=PITCH_TOLERANCE {
                    let cand = nominal + d;
                    let score: f64 = (0..PITCH_WINDOW as isize)
                        .step_by(2)
                        .map(|i| sample(x, cand + i) * sample(x, target + i))
                        .sum();
                    if score > best.0 {
                        best = (score, cand);
                    }
                }
                best.1
            }
        };
        prev = Some(ana);
        for (i, &wv) in win.iter().enumerate() {
            let o = syn + i as isize;
            if o < 0 || o >= out_len as isize {
                continue;
            }
            acc[o as usize] += sample(x, ana + i as isize) * wv;
            norm[o as usize] += wv;
        }
    }
    acc.iter().zip(&norm).map(|(a, w)| if *w > 1e-9 { a / w } else { 0.0 }).collect()
}

/// Linear-interpolation resampling of `y` to `len` samples.
fn resample(y: &[f64], len: usize) -> Vec<f32> {
    let step = y.len() as f64 / len as f64;
    (0..len)
        .map(|i| {
            let p = i as f64 * step;
            let j = p.floor() as usize;
            let frac = p - j as f64;
            let a = y[j.min(y.len() - 1)];
            let b = y[(j + 1).min(y.len() - 1)];
            (a + (b - a) * frac) as f32
        })
        .collect()
}

/// Shifts pitch by `cents` while preserving length: stretch by
/// `r = 2^(cents/1200)`, then resample back to the original length.
pub fn pitch_shift_cents(w: &Waveform, cents: i32) -> Result<Waveform> {
    if w.len() < PITCH_WINDOW {
        return Err(Error::InputTooShort(format!(
            "pitch shift needs at least {PITCH_WINDOW} samples, got {}",
            w.len()
        )));
    }
    if cents == 0 {
        return Ok(w.clone());
    }
    let r = 2f64.powf(f64::from(cents) / 1200.0);
    let ch = |c: usize| resample(&stretch(w.channel(c), r), w.len());
    Ok(Waveform::new(ch(0), ch(1)))
}

/// Draws a shift in semitones and applies it at whole-cent granularity.
pub fn pitch_shift<R: Rng + ?Sized>(w: &Waveform, range_semitones: [f64; 2], rng: &mut R) -> Result<Waveform> {
    let cents = (uniform(rng, range_semitones) * 100.0).round() as i32;
    pitch_shift_cents(w, cents)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn coin<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}

/// Each output draws every stem from a uniformly chosen batch member.
pub fn random_mix<R: Rng + ?Sized>(batch: &[StemSet], rng: &mut R) -> Vec<StemSet> {
    if batch.len() <= 1 {
        return batch.to_vec();
    }
    (0..batch.len())
        .map(|_| {
            let stems = std::array::from_fn(|s| batch[rng.gen_range(0..batch.len())].stems()[s].clone());
            StemSet::new(stems, batch[0].sample_rate).expect("batch chunks share one length")
        })
        .collect()
}

/// Applies every transform to every stem independently with its probability.
pub fn augment_pipeline<R: Rng + ?Sized>(set: &StemSet, spec: &AugmentSpec, rng: &mut R) -> Result<StemSet> {
    let mut stems = set.stems().clone();
    for stem in stems.iter_mut() {
        if coin(rng, spec.p_polarity) {
            *stem = polarity_invert(stem);
        }
        if coin(rng, spec.p_flip) {
            *stem = channel_flip(stem);
        }
        if coin(rng, spec.p_gain) {
            *stem = random_gain(stem, spec.gain_db, rng);
        }
        if coin(rng, spec.p_shift) {
            *stem = temporal_shift(stem, spec.shift_seconds, set.sample_rate, rng);
        }
        if coin(rng, spec.p_pitch) {
            *stem = pitch_shift(stem, spec.pitch_semitones, rng)?;
        }
    }
    StemSet::new(stems, set.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(len: usize, hz: f64) -> Waveform {
        Waveform::from_fn(len, |c, i| ((i as f64 * hz * 2.0 * std::f64::consts::PI / 44100.0).sin() * (0.5 + 0.1 * c as f64)) as f32)
    }

    #[test]
    fn gain_of_six_db_doubles() {
        let w = tone(100, 440.0);
        let g = apply_gain(&w, 20.0 * 2f64.log10());
        for (a, b) in g.samples().zip(w.samples()) {
            assert!((a - 2.0 * b).abs() < 1e-6);
        }
    }

    #[test]
    fn shift_moves_samples_circularly() {
        let w = Waveform::from_fn(5, |_, i| i as f32);
        assert_eq!(circular_shift(&w, 2).channel(0), &[3.0, 4.0, 0.0, 1.0, 2.0]);
        assert_eq!(circular_shift(&circular_shift(&w, 7), -7), w);
    }

    #[test]
    fn pitch_shift_preserves_length_and_zero_shift_is_identity() {
        let w = tone(4000, 440.0);
        assert_eq!(pitch_shift_cents(&w, 0).unwrap(), w);
        let up = pitch_shift_cents(&w, 200).unwrap();
        assert_eq!(up.len(), w.len());
        assert!(pitch_shift_cents(&tone(1000, 440.0), 100).is_err());
    }

    /// Zero crossings in the steady-state middle, as a frequency proxy.
    fn crossings(x: &[f32]) -> usize {
        x.windows(2).filter(|p| p[0] <= 0.0 && p[1] > 0.0).count()
    }

    #[test]
    fn pitch_shift_raises_frequency_by_the_ratio() {
        let w = tone(44100, 441.0);
        let mid = 4410..39690;
        let base = crossings(&w.channel(0)[mid.clone()]) as f64;
        for cents in [1200, 700, -500] {
            let want = 2f64.powf(cents as f64 / 1200.0);
            let up = pitch_shift_cents(&w, cents).unwrap();
            let shifted = crossings(&up.channel(0)[mid.clone()]) as f64;
            assert!((shifted / base / want - 1.0).abs() < 0.03, "{cents}: {shifted} / {base}");
        }
    }

    #[test]
    fn pipeline_with_zero_probabilities_is_identity() {
        let set = StemSet::new(std::array::from_fn(|s| tone(2048, 200.0 * (s + 1) as f64)), 44100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = AugmentSpec::disabled();
        assert_eq!(augment_pipeline(&set, &spec, &mut rng).unwrap(), set);
    }

    #[test]
    fn random_mix_of_one_is_identity() {
        let set = StemSet::new(std::array::from_fn(|s| tone(64, 100.0 * (s + 1) as f64)), 44100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_mix(&[set.clone()], &mut rng), vec![set]);
    }
}
