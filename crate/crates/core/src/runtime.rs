//! Chunked overlap-add inference, SDR/cSDR metrics and corpus evaluation.
//!
//! Inference runs on chunks of `2H` samples starting every `H` samples. Each
//! chunk's output is weighted by a triangular window (rising over the first
//! `H` samples, falling over the second) and the two windows covering any
//! sample sum to one. The mixture is padded with `H` zeros at the front so
//! every input sample lies under two chunks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{Stem, StemSet, Waveform};
use crate::config::StftConfig;
use crate::dataset::{Corpus, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::spectral::{istft, stft, ComplexSpectrogram};

/// Anything mapping a mixture spectrogram to a stem spectrogram.
pub trait SpectrogramModel: Sync {
    fn stft_config(&self) -> &StftConfig;

    fn predict(&self, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram>;
}

impl SpectrogramModel for Network {
    fn stft_config(&self) -> &StftConfig {
        Network::stft_config(self)
    }

    fn predict(&self, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        self.model_forward(spec)
    }
}

/// Returns its input.
pub struct IdentityModel(pub StftConfig);

impl SpectrogramModel for IdentityModel {
    fn stft_config(&self) -> &StftConfig {
        &self.0
    }

    fn predict(&self, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        Ok(spec.clone())
    }
}

/// Returns silence.
pub struct ZeroModel(pub StftConfig);

impl SpectrogramModel for ZeroModel {
    fn stft_config(&self) -> &StftConfig {
        &self.0
    }

    fn predict(&self, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        Ok(spec.zeros_like())
    }
}

/// Crossfade weights of one `2H`-sample chunk.
pub fn crossfade_weights(half: usize) -> Vec<f64> {
    let h = half as f64;
    (0..2 * half).map(|i| if i < half { i as f64 / h } else { (2 * half - i) as f64 / h }).collect()
}

/// Chunk starts (in the front-padded signal) and the padded length for a
/// signal of `len` samples.
pub fn chunk_plan(len: usize, half: usize) -> (Vec<usize>, usize) {
    let last_q = (half + len.max(1) - 1) / half;
    let starts = (0..=last_q).map(|k| k * half).collect();
    (starts, (last_q + 2) * half)
}

/// Chunk length in samples for `seconds` (rounded to an even count).
pub fn chunk_samples(seconds: f64, sample_rate: u32) -> usize {
    let n = (seconds * f64::from(sample_rate)).round() as usize;
    (n / 2 * 2).max(2)
}

/// Separates one stem with 50 % overlap-add of `chunk_len`-sample chunks.
pub fn separate_stem(mixture: &Waveform, model: &dyn SpectrogramModel, chunk_len: usize) -> Result<Waveform> {
    if mixture.is_empty() {
        return Err(Error::InputTooShort("cannot separate an empty mixture".into()));
    }
    let half = (chunk_len / 2).max(1);
    let (starts, padded_len) = chunk_plan(mixture.len(), half);
    let mut padded = Waveform::zeros(padded_len);
    for c in 0..2 {
        padded.channel_mut(c)[half..half + mixture.len()].copy_from_slice(mixture.channel(c));
    }
    let cfg = model.stft_config().clone();
    let outputs: Vec<Waveform> = starts
        .par_iter()
        .map(|&s| {
            let spec = stft(&padded.segment(s, 2 * half), &cfg)?;
            let est = model.predict(&spec)?;
            if est.data.shape() != spec.data.shape() {
                return Err(Error::Shape(format!(
                    "model returned {:?} for a {:?} spectrogram",
                    est.data.shape(),
                    spec.data.shape()
                )));
            }
            istft(&est)
        })
        .collect::<Result<_>>()?;
    let w = crossfade_weights(half);
    let mut acc = [vec![0.0f64; padded_len], vec![0.0f64; padded_len]];
    for (&s, out) in starts.iter().zip(&outputs) {
        for (c, buf) in acc.iter_mut().enumerate() {
            for (i, (&x, &wi)) in out.channel(c).iter().zip(&w).enumerate() {
                buf[s + i] += f64::from(x) * wi;
            }
        }
    }
    let crop = |b: &[f64]| b[half..half + mixture.len()].iter().map(|&v| v as f32).collect();
    Ok(Waveform::new(crop(&acc[0]), crop(&acc[1])))
}

/// Per-stem estimates of one mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationResult {
    pub stems: BTreeMap<Stem, Waveform>,
    /// Config/checkpoint identification of the producing models.
    pub provenance: String,
}

/// One model per stem.
#[derive(Default)]
pub struct StemModels {
    pub models: BTreeMap<Stem, Box<dyn SpectrogramModel>>,
    pub provenance: BTreeMap<Stem, String>,
}

impl StemModels {
    pub fn insert(&mut self, stem: Stem, model: Box<dyn SpectrogramModel>, provenance: impl Into<String>) {
        self.models.insert(stem, model);
        self.provenance.insert(stem, provenance.into());
    }

    fn describe(&self) -> String {
        self.provenance.iter().map(|(s, p)| format!("{s}={p}")).collect::<Vec<_>>().join(";")
    }
}

pub fn separate(mixture: &Waveform, models: &StemModels, chunk_len: usize) -> Result<SeparationResult> {
    let mut stems = BTreeMap::new();
    for (stem, model) in &models.models {
        stems.insert(*stem, separate_stem(mixture, model.as_ref(), chunk_len)?);
    }
    Ok(SeparationResult { stems, provenance: models.describe() })
}

const SDR_EPS: f64 = 1e-10;
pub const SDR_CAP: f64 = 100.0;

/// `10·log10((Σref² + ε) / (Σ(ref − est)² + ε))`, capped at +100 dB.
/// `None` when the reference is silent.
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Option<f64> {
    assert_eq!(reference.len(), estimate.len(), "sdr length mismatch");
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, e) in reference.samples().zip(estimate.samples()) {
        let (r, e) = (f64::from(r), f64::from(e));
        num += r * r;
        den += (r - e) * (r - e);
    }
    if num == 0.0 {
        return None;
    }
    Some((10.0 * ((num + SDR_EPS) / (den + SDR_EPS)).log10()).min(SDR_CAP))
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median SDR over whole one-second chunks (a trailing partial chunk is
/// dropped, silent-reference chunks are excluded).
pub fn csdr_song(reference: &Waveform, estimate: &Waveform, sample_rate: u32) -> Option<f64> {
    let sec = sample_rate as usize;
    let vals: Vec<f64> = (0..reference.len() / sec)
        .filter_map(|k| sdr(&reference.segment(k * sec, sec), &estimate.segment(k * sec, sec)))
        .collect();
    median(&vals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SongScores {
    pub name: String,
    pub csdr: BTreeMap<Stem, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSong {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config: Option<String>,
    pub checkpoints: BTreeMap<Stem, String>,
    pub corpus_hash: Option<String>,
    pub chunk_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub songs: Vec<SongScores>,
    /// Median over songs of the per-song cSDR.
    pub medians: BTreeMap<Stem, Option<f64>>,
    /// Mean of the per-stem medians.
    pub average: Option<f64>,
    pub skipped: Vec<SkippedSong>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn from_songs(songs: Vec<SongScores>, skipped: Vec<SkippedSong>, stems: &[Stem], metadata: ReportMetadata) -> Self {
        let medians: BTreeMap<Stem, Option<f64>> = stems
            .iter()
            .map(|&s| {
                let vals: Vec<f64> = songs.iter().filter_map(|song| song.csdr.get(&s).copied().flatten()).collect();
                (s, median(&vals))
            })
            .collect();
        let present: Vec<f64> = medians.values().filter_map(|v| *v).collect();
        let average = (present.len() == medians.len() && !present.is_empty())
            .then(|| present.iter().sum::<f64>() / present.len() as f64);
        EvalReport { songs, medians, average, skipped, metadata }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Separates every song and scores each stem by cSDR. Songs that fail to
/// load are skipped and listed in the report.
pub fn evaluate(data: &dyn Dataset, models: &StemModels, chunk_len: usize, mut metadata: ReportMetadata) -> Result<EvalReport> {
    let stems: Vec<Stem> = models.models.keys().copied().collect();
    let results: Vec<std::result::Result<SongScores, SkippedSong>> = (0..data.song_count())
        .into_par_iter()
        .map(|i| {
            let name = data.song_name(i).to_string();
            let set: StemSet = match data.load_song(i) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("skipping {name}: {e}");
                    return Err(SkippedSong { name, reason: e.to_string() });
                }
            };
            let mix = set.mixture();
            let mut csdr = BTreeMap::new();
            for (&stem, model) in &models.models {
                let est = separate_stem(&mix, model.as_ref(), chunk_len).map_err(|e| SkippedSong { name: name.clone(), reason: e.to_string() })?;
                csdr.insert(stem, csdr_song(set.stem(stem), &est, set.sample_rate));
            }
            Ok(SongScores { name, csdr })
        })
        .collect();
    let mut songs = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(s) => songs.push(s),
            Err(s) => skipped.push(s),
        }
    }
    metadata.chunk_samples = chunk_len;
    if metadata.checkpoints.is_empty() {
        metadata.checkpoints = models.provenance.clone();
    }
    Ok(EvalReport::from_songs(songs, skipped, &stems, metadata))
}

/// Evaluates a corpus directory. Songs with missing or mismatched stems are
/// skipped with a warning and listed in the report.
pub fn evaluate_corpus(root: &Path, models: &StemModels, chunk_len: usize, mut metadata: ReportMetadata) -> Result<EvalReport> {
    let (songs, rejected) = crate::dataset::scan_corpus_lenient(root)?;
    let corpus = Corpus { root: root.to_path_buf(), songs };
    metadata.corpus_hash = Some(corpus_hash(&corpus)?);
    let mut report = evaluate(&corpus, models, chunk_len, metadata)?;
    for (name, e) in rejected {
        log::warn!("skipping {name}: {e}");
        report.skipped.push(SkippedSong { name, reason: e.to_string() });
    }
    report.skipped.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(report)
}

/// SHA-256 over song names and the bytes of every stem file.
pub fn corpus_hash(corpus: &Corpus) -> Result<String> {
    let mut h = Sha256::new();
    for song in &corpus.songs {
        h.update(song.name.as_bytes());
        for p in &song.stems {
            h.update(std::fs::read(p).map_err(|e| Error::io(p, e))?);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Stem → checkpoint path mapping, read from a TOML table such as
/// `vocals = "ckpt/vocals.msl"`. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub checkpoints: BTreeMap<Stem, PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<Stem, PathBuf> = toml::from_str(&text).map_err(|e| Error::ConfigParse {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        if raw.is_empty() {
            return Err(Error::Empty(format!("{} lists no checkpoints", path.display())));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let checkpoints = raw.into_iter().map(|(s, p)| (s, if p.is_relative() { base.join(p) } else { p })).collect();
        Ok(Manifest { checkpoints })
    }
}
