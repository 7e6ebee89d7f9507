//! Per-stem training: AdamW with global-norm clipping, plateau learning-rate
//! decay, early stopping and best-by-validation-cSDR checkpoint selection.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{Stem, StemSet};
use crate::augment::{augment_pipeline, random_mix};
use crate::checkpoint::Checkpoint;
use crate::config::{Config, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::total_loss_var;
use crate::network::Network;
use crate::params::ParamStore;
use crate::runtime::{chunk_samples, csdr_song, median, separate_stem};
use crate::spectral::stft;
use crate::tensor::Tensor;

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamW { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let [b1, b2] = cfg.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let decay = 1.0 - lr * cfg.weight_decay;
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] *= decay;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_assign(s));
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub initial_lr: f64,
    pub decays: u32,
    /// Lowest validation loss so far; `None` before the first epoch.
    pub best_val_loss: Option<f64>,
    pub epochs_since_improve: usize,
    pub plateau_counter: usize,
    pub best_val_csdr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            epoch: 0,
            lr: cfg.lr,
            initial_lr: cfg.lr,
            decays: 0,
            best_val_loss: None,
            epochs_since_improve: 0,
            plateau_counter: 0,
            best_val_csdr: None,
            best_epoch: None,
            seed: cfg.seed,
        }
    }
}

/// Records one validation loss; decays the learning rate by `plateau_factor`
/// after `plateau_patience` epochs without improvement.
pub fn plateau_step(state: &mut TrainState, val_loss: f64, cfg: &TrainConfig) {
    if state.best_val_loss.map_or(true, |b| val_loss < b - cfg.improve_tol) {
        state.best_val_loss = Some(val_loss);
        state.epochs_since_improve = 0;
        state.plateau_counter = 0;
        return;
    }
    state.epochs_since_improve += 1;
    state.plateau_counter += 1;
    if state.plateau_counter >= cfg.plateau_patience {
        state.decays += 1;
        state.lr = state.initial_lr * cfg.plateau_factor.powi(state.decays as i32);
        state.plateau_counter = 0;
    }
}

pub fn early_stop(state: &TrainState, cfg: &TrainConfig) -> bool {
    state.epochs_since_improve >= cfg.early_stop_patience
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_csdr: Option<f64>,
    pub lr: f64,
}

/// Index of the epoch with the highest validation cSDR; the earliest wins
/// ties and epochs without a score are never chosen.
pub fn select_best(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(c) = r.val_csdr {
            if best.map_or(true, |(_, b)| c > b) {
                best = Some((i, c));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

pub struct Trainer {
    pub config: Config,
    pub stem: Stem,
    pub net: Network,
    pub adam: AdamW,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: Config, stem: Stem) -> Result<Self> {
        config.validate()?;
        let net = Network::new(&config.model, &config.stft, config.train.seed)?;
        let adam = AdamW::new(net.params());
        let state = TrainState::new(&config.train);
        Ok(Trainer { config, stem, net, adam, state })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let net = Network::from_params(&ck.config.model, &ck.config.stft, ck.params)?;
        let adam = ck.adam.unwrap_or_else(|| AdamW::new(net.params()));
        Ok(Trainer { config: ck.config, stem: ck.stem, net, adam, state: ck.state })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            stem: self.stem,
            state: self.state.clone(),
            params: self.net.params().clone(),
            adam: Some(self.adam.clone()),
        }
    }

    pub fn chunk_len(&self) -> usize {
        chunk_samples(self.config.model.chunk_seconds, self.config.stft.sample_rate)
    }

    /// Mean total loss of one item and its parameter gradients.
    fn item_gradients(&self, set: &StemSet) -> Result<(f64, Vec<Tensor>)> {
        let spec = stft(&set.mixture(), &self.config.stft)?;
        let target = set.stem(self.stem).to_tensor();
        let g = Graph::new();
        let p = self.net.params().bind(&g);
        let est = self.net.forward_var(&p, g.leaf(spec.data))?;
        let (loss, breakdown) = total_loss_var(est, &target, &self.config.stft, &self.config.train.multires_windows)?;
        let mut grads = g.backward(loss);
        Ok((breakdown.total, p.collect(&mut grads, self.net.params())))
    }

    /// One optimizer step on `batch`; returns the mean batch loss.
    pub fn train_step(&mut self, batch: &[StemSet]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let items: Vec<(f64, Vec<Tensor>)> = batch.par_iter().map(|s| self.item_gradients(s)).collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Tensor> = self.net.params().tensors().map(|t| Tensor::zeros(t.shape())).collect();
        for (l, g) in &items {
            loss += l * scale;
            for (acc, gi) in grads.iter_mut().zip(g) {
                acc.add_assign(gi);
            }
        }
        grads.iter_mut().for_each(|g| g.scale_assign(scale));
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("loss or gradient at epoch {}", self.state.epoch + 1)));
        }
        clip_global_norm(&mut grads, self.config.train.grad_clip);
        let (lr, cfg) = (self.state.lr, self.config.train.clone());
        self.adam.update(self.net.params_mut(), &grads, lr, &cfg);
        Ok(loss)
    }

    /// Shuffled, augmented pass over the overlapping training chunks.
    pub fn train_epoch(&mut self, data: &dyn Dataset) -> Result<f64> {
        let cfg = self.config.train.clone();
        let mut rng = epoch_rng(self.state.seed, self.state.epoch);
        let mut chunks = data.index(self.chunk_len(), cfg.train_overlap);
        if chunks.is_empty() {
            return Err(Error::Empty("training corpus has no chunks".into()));
        }
        chunks.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for group in chunks.chunks(cfg.batch_size.max(1)) {
            let mut batch = Vec::with_capacity(group.len());
            for c in group {
                batch.push(augment_pipeline(&data.load_chunk(c)?, &cfg.augment, &mut rng)?);
            }
            if cfg.random_mix {
                batch = random_mix(&batch, &mut rng);
            }
            total += self.train_step(&batch)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    /// Mean loss over non-overlapping chunks and median per-song cSDR.
    pub fn validate(&self, data: &dyn Dataset) -> Result<(f64, Option<f64>)> {
        let chunks = data.index(self.chunk_len(), 0.0);
        if chunks.is_empty() {
            return Err(Error::Empty("validation corpus has no chunks".into()));
        }
        let losses: Vec<f64> = chunks
            .par_iter()
            .map(|c| {
                let set = data.load_chunk(c)?;
                let spec = stft(&set.mixture(), &self.config.stft)?;
                let est = self.net.model_forward(&spec)?;
                crate::losses::total_loss(&est, set.stem(self.stem), &self.config.train.multires_windows).map(|b| b.total)
            })
            .collect::<Result<_>>()?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let scores: Vec<Option<f64>> = (0..data.song_count())
            .into_par_iter()
            .map(|i| {
                let set = data.load_song(i)?;
                let est = separate_stem(&set.mixture(), &self.net, self.chunk_len())?;
                Ok(csdr_song(set.stem(self.stem), &est, set.sample_rate))
            })
            .collect::<Result<_>>()?;
        let valid: Vec<f64> = scores.into_iter().flatten().collect();
        Ok((loss, median(&valid)))
    }

    /// Runs one epoch of training and validation and updates the schedule.
    pub fn epoch(&mut self, train: &dyn Dataset, valid: &dyn Dataset) -> Result<EpochRecord> {
        let train_loss = self.train_epoch(train)?;
        let (val_loss, val_csdr) = self.validate(valid)?;
        let lr = self.state.lr;
        self.state.epoch += 1;
        plateau_step(&mut self.state, val_loss, &self.config.train);
        if let Some(c) = val_csdr {
            if self.state.best_val_csdr.map_or(true, |b| c > b) {
                self.state.best_val_csdr = Some(c);
                self.state.best_epoch = Some(self.state.epoch);
            }
        }
        Ok(EpochRecord { epoch: self.state.epoch, train_loss, val_loss, val_csdr, lr })
    }

    /// Trains until `max_epochs` or early stopping. Writes `last.msl` every
    /// epoch, `best.msl` whenever validation cSDR improves and appends one
    /// JSON line per epoch to `train_log.jsonl`.
    pub fn fit(&mut self, train: &dyn Dataset, valid: &dyn Dataset, out_dir: &Path) -> Result<Vec<EpochRecord>> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let log_path = out_dir.join("train_log.jsonl");
        let mut log_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut records = Vec::new();
        while self.state.epoch < self.config.train.max_epochs {
            let best_before = self.state.best_epoch;
            let rec = self.epoch(train, valid)?;
            log::info!(
                "epoch {} train {:.5} val {:.5} csdr {:?} lr {:.3e}",
                rec.epoch,
                rec.train_loss,
                rec.val_loss,
                rec.val_csdr,
                rec.lr
            );
            writeln!(log_file, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&log_path, e))?;
            let ck = self.checkpoint();
            ck.save(&out_dir.join("last.msl"))?;
            if self.state.best_epoch != best_before {
                ck.save(&out_dir.join("best.msl"))?;
            }
            records.push(rec);
            if early_stop(&self.state, &self.config.train) {
                log::info!("early stop after {} epochs without improvement", self.state.epochs_since_improve);
                break;
            }
        }
        Ok(records)
    }
}

/// Paths written by [`Trainer::fit`].
pub fn best_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("best.msl")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn plateau_decays_after_patience() {
        let c = cfg();
        let mut s = TrainState::new(&c);
        plateau_step(&mut s, 1.0, &c);
        for _ in 0..19 {
            plateau_step(&mut s, 1.0, &c);
        }
        assert_eq!(s.lr, 2e-4);
        plateau_step(&mut s, 1.0, &c);
        assert!((s.lr - 1.8e-4).abs() < 1e-15);
        for _ in 0..20 {
            plateau_step(&mut s, 1.0, &c);
        }
        assert!((s.lr - 2e-4 * 0.81).abs() < 1e-15);
    }

    #[test]
    fn tiny_decrease_is_not_improvement() {
        let c = cfg();
        let mut s = TrainState::new(&c);
        plateau_step(&mut s, 1.0, &c);
        plateau_step(&mut s, 1.0 - 1e-7, &c);
        assert_eq!(s.epochs_since_improve, 1);
        plateau_step(&mut s, 0.5, &c);
        assert_eq!(s.epochs_since_improve, 0);
    }

    #[test]
    fn early_stop_after_fifty_stagnant_epochs() {
        let c = cfg();
        let mut s = TrainState::new(&c);
        let mut stopped_at = None;
        for epoch in 1..=200 {
            let loss = if epoch <= 49 { 1.0 / epoch as f64 } else { 1.0 };
            plateau_step(&mut s, loss, &c);
            if early_stop(&s, &c) {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(99));
    }

    #[test]
    fn best_selection_prefers_earliest_tie() {
        let rec = |e, c| EpochRecord { epoch: e, train_loss: 0.0, val_loss: 0.0, val_csdr: c, lr: 0.0 };
        let r = vec![rec(1, Some(1.0)), rec(2, Some(3.0)), rec(3, None), rec(4, Some(3.0))];
        assert_eq!(select_best(&r), Some(1));
        assert_eq!(select_best(&[rec(1, None)]), None);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::from_vec(&[2], vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
        let mut small = vec![Tensor::from_vec(&[1], vec![0.5])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.5]);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let specs = vec![crate::params::ParamSpec {
            name: "w".into(),
            shape: vec![3],
            init: crate::params::Init::Uniform { fan_in: 3 },
        }];
        let mut p = ParamStore::initialize(&specs, 1);
        let before = p.clone();
        let mut adam = AdamW::new(&p);
        adam.update(&mut p, &[Tensor::from_vec(&[3], vec![1.0, -2.0, 0.1])], 0.0, &cfg());
        assert_eq!(p, before);
    }
}
