mod common;

use bandsep_core::audio::Stem;
use bandsep_core::checkpoint::Checkpoint;
use bandsep_core::dataset::MemoryDataset;
use bandsep_core::trainer::{select_best, EpochRecord, Trainer};
use bandsep_core::Error;

fn overfit_losses(steps: usize) -> Vec<f64> {
    let chunk = common::two_stem_chunk(1024, 3);
    let mut t = Trainer::new(common::tiny_config(), Stem::Vocals).unwrap();
    (0..steps).map(|_| t.train_step(std::slice::from_ref(&chunk)).unwrap()).collect()
}

#[test]
fn tiny_model_overfits_one_chunk_deterministically() {
    let a = overfit_losses(200);
    assert!(a[199] <= 0.1 * a[0], "{} -> {}", a[0], a[199]);
    assert_eq!(a[..20], overfit_losses(20)[..]);
}

fn datasets() -> (MemoryDataset, MemoryDataset) {
    let train = MemoryDataset::new(vec![
        ("a".into(), common::four_stem_song(2000, 1)),
        ("b".into(), common::four_stem_song(1500, 2)),
    ]);
    let valid = MemoryDataset::new(vec![("v".into(), common::four_stem_song(44100 + 500, 3))]);
    (train, valid)
}

#[test]
fn resume_continues_bit_exactly() {
    let (train, valid) = datasets();
    let mut straight = Trainer::new(common::tiny_config(), Stem::Bass).unwrap();
    let r1 = straight.epoch(&train, &valid).unwrap();
    let r2 = straight.epoch(&train, &valid).unwrap();

    let mut first = Trainer::new(common::tiny_config(), Stem::Bass).unwrap();
    assert_eq!(first.epoch(&train, &valid).unwrap(), r1);
    let bytes = first.checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.epoch(&train, &valid).unwrap(), r2);
    assert_eq!(resumed.net.params(), straight.net.params());
    assert_eq!(resumed.state, straight.state);
}

#[test]
fn fit_writes_log_and_checkpoints() {
    let (train, valid) = datasets();
    let mut cfg = common::tiny_config();
    cfg.train.max_epochs = 3;
    let mut t = Trainer::new(cfg, Stem::Vocals).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = t.fit(&train, &valid, dir.path()).unwrap();
    assert_eq!(records.len(), 3);
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let parsed: Vec<EpochRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, records);
    let last = Checkpoint::load(&dir.path().join("last.msl")).unwrap();
    assert_eq!(last.state.epoch, 3);
    let best = Checkpoint::load(&dir.path().join("best.msl")).unwrap();
    let chosen = select_best(&records).unwrap();
    assert_eq!(best.state.best_epoch, Some(records[chosen].epoch));
    assert_eq!(best.state.epoch, records[chosen].epoch);
}

#[test]
fn validation_loss_is_mean_over_nonoverlapping_chunks() {
    let (_, valid) = datasets();
    let t = Trainer::new(common::tiny_config(), Stem::Drums).unwrap();
    let (loss, csdr) = t.validate(&valid).unwrap();
    let n = t.chunk_len();
    let chunks = bandsep_core::Dataset::index(&valid, n, 0.0);
    let mut sum = 0.0;
    for c in &chunks {
        let set = bandsep_core::Dataset::load_chunk(&valid, c).unwrap();
        let spec = bandsep_core::stft(&set.mixture(), &t.config.stft).unwrap();
        let est = t.net.model_forward(&spec).unwrap();
        sum += bandsep_core::total_loss(&est, set.stem(Stem::Drums), &t.config.train.multires_windows).unwrap().total;
    }
    assert!((loss - sum / chunks.len() as f64).abs() < 1e-12);
    assert!(csdr.is_some());
}

#[test]
fn non_finite_input_aborts_training() {
    let mut chunk = common::two_stem_chunk(1024, 3);
    chunk.stem_mut(Stem::Bass).channel_mut(0)[10] = f32::NAN;
    let mut t = Trainer::new(common::tiny_config(), Stem::Vocals).unwrap();
    let before = t.net.params().clone();
    assert!(matches!(t.train_step(&[chunk]), Err(Error::NonFinite(_))));
    assert_eq!(t.net.params(), &before);
}
