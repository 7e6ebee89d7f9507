mod common;

use bandsep_core::audio::{read_wav, write_wav_pcm16, Stem};
use bandsep_core::dataset::{scan_corpus, write_song, Corpus, Dataset};
use bandsep_core::runtime::{evaluate_corpus, IdentityModel, ReportMetadata, StemModels};
use bandsep_core::{Error, StftConfig};

fn full_band() -> StftConfig {
    StftConfig { window_size: 256, hop: 64, kept_bins: 129, ..StftConfig::default() }
}

#[test]
fn scanned_songs_load_consistently_with_their_mixture() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["b_song", "a_song"].iter().enumerate() {
        write_song(dir.path(), name, &common::four_stem_song(3000 + 100 * i, i as u64)).unwrap();
    }
    let corpus = Corpus::open(dir.path()).unwrap();
    assert_eq!(corpus.songs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["a_song", "b_song"]);
    for i in 0..corpus.song_count() {
        let set = corpus.load_song(i).unwrap();
        let mix = corpus.load_mixture_file(i).unwrap().unwrap();
        for (a, b) in set.mixture().samples().zip(mix.samples()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    let chunk = corpus.load_chunk(&corpus.index(2000, 0.5).pop().unwrap()).unwrap();
    assert_eq!(chunk.len(), 2000);
}

#[test]
fn missing_stem_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let song = write_song(dir.path(), "x", &common::four_stem_song(500, 1)).unwrap();
    std::fs::remove_file(song.join("bass.wav")).unwrap();
    match scan_corpus(dir.path()) {
        Err(Error::MissingStem { song, stem }) => assert_eq!((song.as_str(), stem.as_str()), ("x", "bass")),
        other => panic!("expected MissingStem, got {other:?}"),
    }
}

#[test]
fn wrong_sample_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let song = write_song(dir.path(), "x", &common::four_stem_song(500, 1)).unwrap();
    let w = read_wav(&song.join("drums.wav")).unwrap().0;
    write_wav_pcm16(&song.join("drums.wav"), &w, 48000).unwrap();
    assert!(matches!(scan_corpus(dir.path()), Err(Error::Corpus(_))));
}

#[test]
fn evaluation_skips_broken_songs_and_hashes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["s1", "s2"].iter().enumerate() {
        write_song(dir.path(), name, &common::four_stem_song(44100 + 2000, i as u64 + 1)).unwrap();
    }
    let broken = write_song(dir.path(), "s3", &common::four_stem_song(44100, 9)).unwrap();
    std::fs::remove_file(broken.join("other.wav")).unwrap();
    let mut models = StemModels::default();
    models.insert(Stem::Vocals, Box::new(IdentityModel(full_band())), "identity");
    let report = evaluate_corpus(dir.path(), &models, 4096, ReportMetadata::default()).unwrap();
    assert_eq!(report.songs.len(), 2);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].name, "s3");
    let hash = report.metadata.corpus_hash.clone().unwrap();
    assert_eq!(hash.len(), 64);
    let again = evaluate_corpus(dir.path(), &models, 4096, ReportMetadata::default()).unwrap();
    assert_eq!(again, report);
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert!(json["medians"]["vocals"].is_number());
}
