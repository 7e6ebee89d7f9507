//! Deterministic inputs shared by the benchmarks.

use bandsep_core::{Tensor, Waveform, SAMPLE_RATE};

/// Stereo two-tone signal of `seconds` length.
pub fn test_signal(seconds: f64) -> Waveform {
    let n = (seconds * f64::from(SAMPLE_RATE)) as usize;
    let sr = f64::from(SAMPLE_RATE);
    Waveform::from_fn(n, |c, i| {
        let t = i as f64 / sr;
        let f = if c == 0 { 440.0 } else { 660.0 };
        (0.5 * (std::f64::consts::TAU * f * t).sin()) as f32
    })
}

/// Tensor filled with a fixed pseudo-random pattern in [-1, 1).
pub fn pattern(shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let data = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::from_vec(shape, data)
}
