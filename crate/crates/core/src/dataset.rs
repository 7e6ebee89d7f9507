//! Stem-folder corpora, chunk indexing and chunk loading.
//!
//! A corpus root holds one directory per song, each with
//! `vocals.wav`, `drums.wav`, `bass.wav`, `other.wav` and optionally
//! `mixture.wav`, all stereo at 44.1 kHz.

use std::path::{Path, PathBuf};

use crate::audio::{read_wav_range, StemSet, Stem, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SongDescriptor {
    pub name: String,
    pub dir: PathBuf,
    pub stems: [PathBuf; 4],
    pub mixture: Option<PathBuf>,
    /// Length in samples per channel.
    pub length: usize,
    pub sample_rate: u32,
}

/// A fixed-length window of one song. `padded` marks windows that extend
/// past the end of the song; the excess loads as zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkRef {
    pub song: usize,
    pub start: usize,
    pub length: usize,
    pub padded: bool,
}

fn wav_header(path: &Path) -> Result<(usize, u32, u16)> {
    let r = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = r.spec();
    Ok((r.duration() as usize, spec.sample_rate, spec.channels))
}

fn describe_song(dir: &Path, name: &str) -> Result<SongDescriptor> {
    let mut lengths = Vec::with_capacity(5);
    let check = |path: &Path, label: &str| -> Result<usize> {
        let (len, sr, ch) = wav_header(path)?;
        if sr != SAMPLE_RATE {
            return Err(Error::Corpus(format!("{label} in {name}: sample rate {sr}, expected {SAMPLE_RATE}")));
        }
        if ch != 2 {
            return Err(Error::Corpus(format!("{label} in {name}: {ch} channel(s), expected stereo")));
        }
        Ok(len)
    };
    let mut stems: Vec<PathBuf> = Vec::with_capacity(4);
    for stem in Stem::ALL {
        let p = dir.join(format!("{}.wav", stem.name()));
        if !p.is_file() {
            return Err(Error::MissingStem { song: name.to_string(), stem: stem.name().to_string() });
        }
        lengths.push(check(&p, stem.name())?);
        stems.push(p);
    }
    let mix = dir.join("mixture.wav");
    let mixture = if mix.is_file() {
        lengths.push(check(&mix, "mixture")?);
        Some(mix)
    } else {
        None
    };
    if lengths.iter().any(|&l| l != lengths[0]) {
        return Err(Error::Corpus(format!("stem lengths differ in {name}: {lengths:?}")));
    }
    Ok(SongDescriptor {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        stems: stems.try_into().expect("four stems"),
        mixture,
        length: lengths[0],
        sample_rate: SAMPLE_RATE,
    })
}

fn song_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// One descriptor per song directory, ordered by name.
pub fn scan_corpus(root: &Path) -> Result<Vec<SongDescriptor>> {
    song_dirs(root)?.iter().map(|(name, dir)| describe_song(dir, name)).collect()
}

/// Like [`scan_corpus`], but songs that fail to describe are returned
/// separately instead of aborting the scan.
pub fn scan_corpus_lenient(root: &Path) -> Result<(Vec<SongDescriptor>, Vec<(String, Error)>)> {
    let mut songs = Vec::new();
    let mut rejected = Vec::new();
    for (name, dir) in song_dirs(root)? {
        match describe_song(&dir, &name) {
            Ok(d) => songs.push(d),
            Err(e) => rejected.push((name, e)),
        }
    }
    Ok((songs, rejected))
}

/// Windows of `chunk_len` samples at stride `round((1 − overlap) · chunk_len)`,
/// plus a final padded window if the strided ones stop short of the end.
pub fn index_chunks(song: usize, song_len: usize, chunk_len: usize, overlap: f64) -> Vec<ChunkRef> {
    assert!(chunk_len > 0 && (0.0..1.0).contains(&overlap), "invalid chunking");
    let stride = (((1.0 - overlap) * chunk_len as f64).round() as usize).max(1);
    if song_len <= chunk_len {
        return vec![ChunkRef { song, start: 0, length: chunk_len, padded: song_len < chunk_len }];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + chunk_len <= song_len {
        out.push(ChunkRef { song, start, length: chunk_len, padded: false });
        start += stride;
    }
    let covered = out.last().map_or(0, |c| c.start + chunk_len);
    if covered < song_len {
        out.push(ChunkRef { song, start, length: chunk_len, padded: true });
    }
    out
}

/// Songs with aligned stems, loadable by sample range.
pub trait Dataset: Sync {
    fn song_count(&self) -> usize;

    fn song_name(&self, song: usize) -> &str;

    fn song_length(&self, song: usize) -> usize;

    /// Stems over `[start, start + len)`, zero-filled past the end.
    fn load_range(&self, song: usize, start: usize, len: usize) -> Result<StemSet>;

    fn load_song(&self, song: usize) -> Result<StemSet> {
        self.load_range(song, 0, self.song_length(song))
    }

    fn load_chunk(&self, chunk: &ChunkRef) -> Result<StemSet> {
        self.load_range(chunk.song, chunk.start, chunk.length)
    }

    fn index(&self, chunk_len: usize, overlap: f64) -> Vec<ChunkRef> {
        (0..self.song_count())
            .flat_map(|s| index_chunks(s, self.song_length(s), chunk_len, overlap))
            .collect()
    }
}

/// A scanned corpus on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub songs: Vec<SongDescriptor>,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Corpus { root: root.to_path_buf(), songs: scan_corpus(root)? })
    }

    pub fn load_mixture_file(&self, song: usize) -> Result<Option<Waveform>> {
        let Some(path) = &self.songs[song].mixture else { return Ok(None) };
        let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
        Ok(Some(read_wav_range(reader, path, 0, None)?.0))
    }
}

fn read_segment(path: &Path, start: usize, len: usize, total: usize) -> Result<Waveform> {
    if start >= total || len == 0 {
        return Ok(Waveform::zeros(len));
    }
    let reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let (w, _) = read_wav_range(reader, path, start, Some(len))?;
    Ok(if w.len() < len { w.segment(0, len) } else { w })
}

impl Dataset for Corpus {
    fn song_count(&self) -> usize {
        self.songs.len()
    }

    fn song_name(&self, song: usize) -> &str {
        &self.songs[song].name
    }

    fn song_length(&self, song: usize) -> usize {
        self.songs[song].length
    }

    fn load_range(&self, song: usize, start: usize, len: usize) -> Result<StemSet> {
        let d = &self.songs[song];
        let mut stems = Vec::with_capacity(4);
        for p in &d.stems {
            stems.push(read_segment(p, start, len, d.length)?);
        }
        StemSet::new(stems.try_into().expect("four stems"), d.sample_rate)
    }
}

/// Songs held in memory (synthetic corpora and tests).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryDataset {
    pub songs: Vec<(String, StemSet)>,
}

impl MemoryDataset {
    pub fn new(songs: Vec<(String, StemSet)>) -> Self {
        MemoryDataset { songs }
    }
}

impl Dataset for MemoryDataset {
    fn song_count(&self) -> usize {
        self.songs.len()
    }

    fn song_name(&self, song: usize) -> &str {
        &self.songs[song].0
    }

    fn song_length(&self, song: usize) -> usize {
        self.songs[song].1.len()
    }

    fn load_range(&self, song: usize, start: usize, len: usize) -> Result<StemSet> {
        let set = &self.songs[song].1;
        let stems = std::array::from_fn(|s| set.stems()[s].segment(start, len));
        StemSet::new(stems, set.sample_rate)
    }
}

/// Writes a [`StemSet`] as a song directory (with `mixture.wav`).
pub fn write_song(root: &Path, name: &str, set: &StemSet) -> Result<PathBuf> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for stem in Stem::ALL {
        crate::audio::write_wav(&dir.join(format!("{}.wav", stem.name())), set.stem(stem), set.sample_rate)?;
    }
    crate::audio::write_wav(&dir.join("mixture.wav"), &set.mixture(), set.sample_rate)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_second_song_gives_seventeen_chunks() {
        let sr = 44100;
        let chunks = index_chunks(0, 30 * sr, 6 * sr, 0.75);
        assert_eq!(chunks.len(), (30 - 6) * 2 / 3 + 1);
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.start, i * 3 * sr / 2);
            assert!(!c.padded);
        }
    }

    #[test]
    fn short_and_exact_songs() {
        let sr = 44100;
        assert_eq!(index_chunks(0, 6 * sr, 6 * sr, 0.75).len(), 1);
        let short = index_chunks(0, 4 * sr, 6 * sr, 0.75);
        assert_eq!(short.len(), 1);
        assert!(short[0].padded);
    }

    #[test]
    fn trailing_partial_chunk_is_padded() {
        assert_eq!(index_chunks(3, 10, 4, 0.5).len(), 4);
        let c = index_chunks(3, 11, 4, 0.5);
        let starts: Vec<usize> = c.iter().map(|c| c.start).collect();
        assert_eq!(starts, vec![0, 2, 4, 6, 8]);
        assert!(c.last().unwrap().padded);
        assert!(c.iter().all(|c| c.song == 3));
    }

    #[test]
    fn memory_dataset_pads_with_zeros() {
        let set = StemSet::new(std::array::from_fn(|s| Waveform::from_fn(5, |_, i| (i + s) as f32)), 44100).unwrap();
        let ds = MemoryDataset::new(vec![("a".into(), set)]);
        let got = ds.load_range(0, 3, 4).unwrap();
        assert_eq!(got.stem(Stem::Drums).channel(0), &[4.0, 5.0, 0.0, 0.0]);
    }
}
