//! Stereo waveforms, stems and WAV I/O.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 44100;

/// Two-channel audio, `f32` amplitude nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    channels: [Vec<f32>; 2],
}

impl Waveform {
    /// Panics if the channels differ in length.
    pub fn new(left: Vec<f32>, right: Vec<f32>) -> Self {
        assert_eq!(left.len(), right.len(), "stereo channels differ in length");
        Waveform { channels: [left, right] }
    }

    pub fn zeros(len: usize) -> Self {
        Waveform::new(vec![0.0; len], vec![0.0; len])
    }

    pub fn from_fn(len: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        Waveform::new((0..len).map(|i| f(0, i)).collect(), (0..len).map(|i| f(1, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut Vec<f32> {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f32>; 2] {
        &self.channels
    }

    pub fn into_channels(self) -> [Vec<f32>; 2] {
        self.channels
    }

    pub fn samples(&self) -> impl Iterator<Item = f32> + '_ {
        self.channels[0].iter().chain(self.channels[1].iter()).copied()
    }

    pub fn peak(&self) -> f32 {
        self.samples().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.samples().all(f32::is_finite)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Waveform {
        Waveform::new(
            self.channels[0].iter().map(|&x| f(x)).collect(),
            self.channels[1].iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Waveform) {
        assert_eq!(self.len(), other.len(), "waveform length mismatch");
        for c in 0..2 {
            for (a, b) in self.channels[c].iter_mut().zip(&other.channels[c]) {
                *a += b;
            }
        }
    }

    /// Samples `[start, start + len)`, zero-filled past the end.
    pub fn segment(&self, start: usize, len: usize) -> Waveform {
        let take = |ch: &Vec<f32>| {
            let mut v = vec![0.0; len];
            if start < ch.len() {
                let end = (start + len).min(ch.len());
                v[..end - start].copy_from_slice(&ch[start..end]);
            }
            v
        };
        Waveform::new(take(&self.channels[0]), take(&self.channels[1]))
    }

    /// `(2, len)` tensor in `f64`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.samples().map(f64::from).collect();
        Tensor::from_vec(&[2, self.len()], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Waveform> {
        if t.ndim() != 2 || t.dim(0) != 2 {
            return Err(Error::Shape(format!("expected (2, n) waveform tensor, got {:?}", t.shape())));
        }
        let n = t.dim(1);
        let conv = |s: &[f64]| s.iter().map(|&x| x as f32).collect::<Vec<_>>();
        Ok(Waveform::new(conv(&t.data()[..n]), conv(&t.data()[n..])))
    }
}

/// The four separation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stem {
    Vocals,
    Drums,
    Bass,
    Other,
}

impl Stem {
    pub const ALL: [Stem; 4] = [Stem::Vocals, Stem::Drums, Stem::Bass, Stem::Other];

    pub fn name(self) -> &'static str {
        match self {
            Stem::Vocals => "vocals",
            Stem::Drums => "drums",
            Stem::Bass => "bass",
            Stem::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stem::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Invariant(format!("unknown stem {s:?} (expected vocals|drums|bass|other)")))
    }
}

/// Aligned stereo stems of one song or chunk. The mixture is their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct StemSet {
    stems: [Waveform; 4],
    pub sample_rate: u32,
}

impl StemSet {
    pub fn new(stems: [Waveform; 4], sample_rate: u32) -> Result<Self> {
        let len = stems[0].len();
        if stems.iter().any(|s| s.len() != len) {
            return Err(Error::Shape("stems differ in length".into()));
        }
        Ok(StemSet { stems, sample_rate })
    }

    pub fn silent(len: usize) -> Self {
        StemSet { stems: std::array::from_fn(|_| Waveform::zeros(len)), sample_rate: SAMPLE_RATE }
    }

    pub fn len(&self) -> usize {
        self.stems[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stem(&self, s: Stem) -> &Waveform {
        &self.stems[s.index()]
    }

    pub fn stem_mut(&mut self, s: Stem) -> &mut Waveform {
        &mut self.stems[s.index()]
    }

    pub fn stems(&self) -> &[Waveform; 4] {
        &self.stems
    }

    /// Sum of the four stems, accumulated in stem order.
    pub fn mixture(&self) -> Waveform {
        let mut mix = self.stems[0].clone();
        for s in &self.stems[1..] {
            mix.add_assign(s);
        }
        mix
    }
}

/// Reads a stereo WAV file (16/24/32-bit PCM or 32-bit float) as `f32`.
pub fn read_wav(path: &Path) -> Result<(Waveform, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    read_wav_range(reader, path, 0, None)
}

pub(crate) fn read_wav_range<R: std::io::Read + std::io::Seek>(
    mut reader: hound::WavReader<R>,
    path: &Path,
    start: usize,
    len: Option<usize>,
) -> Result<(Waveform, u32)> {
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if nch != 2 {
        return Err(Error::Corpus(format!("{}: expected stereo, found {nch} channel(s)", path.display())));
    }
    let total = reader.duration() as usize;
    let start = start.min(total);
    let count = len.map_or(total - start, |l| l.min(total - start));
    reader.seek(start as u32).map_err(|e| Error::io(path, e))?;
    let n = count * nch;
    let mut interleaved: Vec<f32> = Vec::with_capacity(n);
    match spec.sample_format {
        hound::SampleFormat::Float => {
            for s in reader.samples::<f32>().take(n) {
                interleaved.push(s.map_err(|e| Error::wav(path, e))?);
            }
        }
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            for s in reader.samples::<i32>().take(n) {
                interleaved.push(s.map_err(|e| Error::wav(path, e))? as f32 * scale);
            }
        }
    }
    let frames = interleaved.len() / 2;
    let mut left = Vec::with_capacity(frames);
    let mut right = Vec::with_capacity(frames);
    for fr in interleaved.chunks_exact(2) {
        left.push(fr[0]);
        right.push(fr[1]);
    }
    Ok((Waveform::new(left, right), spec.sample_rate))
}

/// Writes 32-bit float stereo.
pub fn write_wav(path: &Path, wave: &Waveform, sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for i in 0..wave.len() {
        for c in 0..2 {
            w.write_sample(wave.channel(c)[i]).map_err(|e| Error::wav(path, e))?;
        }
    }
    w.finalize().map_err(|e| Error::wav(path, e))
}

/// Writes 16-bit PCM stereo (used for fixtures).
pub fn write_wav_pcm16(path: &Path, wave: &Waveform, sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec { channels: 2, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for i in 0..wave.len() {
        for c in 0..2 {
            let v = (wave.channel(c)[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(|e| Error::wav(path, e))?;
        }
    }
    w.finalize().map_err(|e| Error::wav(path, e))
}
