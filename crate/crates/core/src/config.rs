//! Hyperparameters, presets and the TOML config file.
//!
//! A config file has three tables, `[model]`, `[stft]` and `[train]` (with an
//! optional `[train.augment]` subtable). Omitted keys take the defaults of the
//! `proposed` preset; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    /// Frequency bins kept after analysis; higher bins are discarded.
    pub kept_bins: usize,
    pub sample_rate: u32,
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window_size: 6144, hop: 1024, kept_bins: 2048, sample_rate: 44100, center: true }
    }
}

impl StftConfig {
    pub fn full_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        1 + samples / self.hop
    }

    /// Highest frequency (Hz) that survives bin truncation.
    pub fn cutoff_hz(&self) -> f64 {
        self.kept_bins as f64 * self.sample_rate as f64 / self.window_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        check(self.hop > 0, "hop > 0")?;
        check(self.window_size > self.hop, "window_size > hop")?;
        check(self.kept_bins >= 1, "kept_bins >= 1")?;
        check(self.kept_bins <= self.full_bins(), "kept_bins <= window_size/2 + 1")?;
        check(self.sample_rate > 0, "sample_rate > 0")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_band: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_rope: usize,
    pub n_split_enc: usize,
    pub n_split_dec: usize,
    /// Base channel width G.
    pub g: usize,
    /// Kernel size of the first and last split modules.
    pub k_outer: usize,
    /// Kernel size of the split modules inside the TFC blocks.
    pub k_inner: usize,
    pub c_in: usize,
    /// Attention width of the RoPE blocks. `None` uses the bottleneck width
    /// `(n_enc + 1) * g`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_dim: Option<usize>,
    pub heads: usize,
    /// Training/inference input length in seconds.
    pub chunk_seconds: f64,
    /// Hidden expansion of the transformer feed-forward sublayers.
    pub ffn_factor: usize,
    /// Bottleneck reduction of the per-band frequency FC (TDF).
    pub tdf_factor: usize,
    /// Extra split TFC block between encoder and sequence model.
    pub bottleneck_block: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_band: 4,
            n_enc: 3,
            n_dec: 1,
            n_rope: 5,
            n_split_enc: 3,
            n_split_dec: 1,
            g: 56,
            k_outer: 3,
            k_inner: 1,
            c_in: 4,
            seq_dim: None,
            heads: 4,
            chunk_seconds: 9.0,
            ffn_factor: 2,
            tdf_factor: 16,
            bottleneck_block: false,
        }
    }
}

impl ModelConfig {
    pub fn bottleneck_channels(&self) -> usize {
        (self.n_enc + 1) * self.g
    }

    pub fn seq_width(&self) -> usize {
        self.seq_dim.unwrap_or_else(|| self.bottleneck_channels())
    }

    pub fn head_dim(&self) -> usize {
        self.seq_width() / self.heads.max(1)
    }

    /// Channels after stacking the subbands: `c_in * n_band`.
    pub fn band_channels(&self) -> usize {
        self.c_in * self.n_band
    }

    pub fn bins_per_band(&self, kept_bins: usize) -> usize {
        kept_bins / self.n_band.max(1)
    }

    pub fn validate(&self, stft: &StftConfig) -> Result<()> {
        check(self.n_band >= 1, "n_band >= 1")?;
        if self.g % self.n_band != 0 {
            return Err(Error::Invariant(format!("g mod n_band != 0 (g={}, n_band={})", self.g, self.n_band)));
        }
        if stft.kept_bins % self.n_band != 0 {
            return Err(Error::Invariant(format!(
                "kept_bins mod n_band != 0 (kept_bins={}, n_band={})",
                stft.kept_bins, self.n_band
            )));
        }
        check(self.c_in == 4, "c_in == 4 (stereo real/imag)")?;
        check(self.g >= 1, "g >= 1")?;
        check(self.n_dec >= 1, "n_dec >= 1")?;
        check(self.n_enc >= self.n_dec, "n_enc >= n_dec")?;
        check(self.n_split_dec >= 1, "n_split_dec >= 1")?;
        check(self.n_split_enc >= self.n_split_dec, "n_split_enc >= n_split_dec")?;
        check(self.k_outer % 2 == 1, "k_outer odd")?;
        check(self.k_inner % 2 == 1, "k_inner odd")?;
        check(self.heads >= 1, "heads >= 1")?;
        if self.seq_width() % self.heads != 0 {
            return Err(Error::Invariant(format!(
                "seq_dim mod heads != 0 (seq_dim={}, heads={})",
                self.seq_width(),
                self.heads
            )));
        }
        check(self.head_dim() % 2 == 0, "head_dim even (rotary pairs)")?;
        check(self.chunk_seconds > 0.0 && self.chunk_seconds.is_finite(), "chunk_seconds > 0")?;
        check(self.ffn_factor >= 1, "ffn_factor >= 1")?;
        check(self.tdf_factor >= 1, "tdf_factor >= 1")?;
        check(self.bins_per_band(stft.kept_bins) >= self.tdf_factor, "bins_per_band >= tdf_factor")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub p_polarity: f64,
    pub p_flip: f64,
    pub p_gain: f64,
    pub p_shift: f64,
    pub p_pitch: f64,
    pub gain_db: [f64; 2],
    pub pitch_semitones: [f64; 2],
    pub shift_seconds: [f64; 2],
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            p_polarity: 0.5,
            p_flip: 0.5,
            p_gain: 0.5,
            p_shift: 0.5,
            p_pitch: 0.5,
            gain_db: [-6.0, 6.0],
            pitch_semitones: [-2.0, 2.0],
            shift_seconds: [-0.5, 0.5],
        }
    }
}

impl AugmentSpec {
    /// Every transform disabled.
    pub fn disabled() -> Self {
        AugmentSpec { p_polarity: 0.0, p_flip: 0.0, p_gain: 0.0, p_shift: 0.0, p_pitch: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_polarity", self.p_polarity),
            ("p_flip", self.p_flip),
            ("p_gain", self.p_gain),
            ("p_shift", self.p_shift),
            ("p_pitch", self.p_pitch),
        ] {
            check((0.0..=1.0).contains(&p), &format!("{name} in [0, 1]"))?;
        }
        for (name, [lo, hi]) in [
            ("gain_db", self.gain_db),
            ("pitch_semitones", self.pitch_semitones),
            ("shift_seconds", self.shift_seconds),
        ] {
            check(lo.is_finite() && hi.is_finite() && lo <= hi, &format!("{name} range lo <= hi"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub train_overlap: f64,
    pub infer_overlap: f64,
    pub seed: u64,
    /// (window, hop) pairs of the multi-resolution spectral loss.
    pub multires_windows: Vec<[usize; 2]>,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub max_epochs: usize,
    /// Minimum decrease of the validation loss that counts as improvement.
    pub improve_tol: f64,
    pub random_mix: bool,
    pub augment: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            plateau_patience: 20,
            plateau_factor: 0.9,
            early_stop_patience: 50,
            batch_size: 8,
            train_overlap: 0.75,
            infer_overlap: 0.5,
            seed: 0,
            multires_windows: vec![[4096, 1024], [2048, 512], [1024, 256]],
            weight_decay: 1e-2,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            grad_clip: 5.0,
            max_epochs: 1000,
            improve_tol: 1e-6,
            random_mix: true,
            augment: AugmentSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.lr >= 0.0 && self.lr.is_finite(), "lr >= 0")?;
        check(self.plateau_factor > 0.0 && self.plateau_factor < 1.0, "0 < plateau_factor < 1")?;
        check((0.0..1.0).contains(&self.train_overlap), "0 <= train_overlap < 1")?;
        check((0.0..1.0).contains(&self.infer_overlap), "0 <= infer_overlap < 1")?;
        check(self.early_stop_patience >= self.plateau_patience, "early_stop_patience >= plateau_patience")?;
        check(self.batch_size >= 1, "batch_size >= 1")?;
        check(!self.multires_windows.is_empty(), "multires_windows non-empty")?;
        for &[w, h] in &self.multires_windows {
            check(h > 0 && w > h, "multires window > hop > 0")?;
        }
        check((0.0..1.0).contains(&self.betas[0]) && (0.0..1.0).contains(&self.betas[1]), "betas in [0, 1)")?;
        check(self.weight_decay >= 0.0, "weight_decay >= 0")?;
        check(self.adam_eps > 0.0, "adam_eps > 0")?;
        check(self.grad_clip >= 0.0, "grad_clip >= 0")?;
        check(self.improve_tol >= 0.0, "improve_tol >= 0")?;
        self.augment.validate()
    }
}

fn check(cond: bool, invariant: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Invariant(format!("violated: {invariant}")))
    }
}

/// Named architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Proposed,
    ProposedS,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Preset::Proposed),
            "proposed-s" => Ok(Preset::ProposedS),
            other => Err(Error::Invariant(format!("unknown preset {other:?} (expected proposed|proposed-s)"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Proposed => "proposed",
            Preset::ProposedS => "proposed-s",
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Proposed => ModelConfig::default(),
            Preset::ProposedS => ModelConfig { g: 32, n_rope: 6, ..ModelConfig::default() },
        }
    }
}

/// The three configuration tables of a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub stft: StftConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        Config { model: preset.model(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.model.validate(&self.stft)?;
        self.train.validate()
    }

    /// Parses and validates a config document. `origin` names the source in
    /// diagnostics.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::ConfigParse {
            origin: origin.to_string(),
            message: describe_toml_error(text, &e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

fn describe_toml_error(text: &str, err: &toml::de::Error) -> String {
    let msg = err.message().to_string();
    match err.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg,
    }
}

/// Loads and validates a config file; omitted fields take their defaults.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Config::from_toml_str(&text, &path.display().to_string())
}

/// Deterministic multi-line summary of every field plus derived shapes.
pub fn describe(cfg: &Config) -> String {
    let (m, s, t) = (&cfg.model, &cfg.stft, &cfg.train);
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    line("n_band", m.n_band.to_string());
    line("n_enc", m.n_enc.to_string());
    line("n_dec", m.n_dec.to_string());
    line("n_rope", m.n_rope.to_string());
    line("n_split_enc", m.n_split_enc.to_string());
    line("n_split_dec", m.n_split_dec.to_string());
    line("g", m.g.to_string());
    line("k_outer", m.k_outer.to_string());
    line("k_inner", m.k_inner.to_string());
    line("c_in", m.c_in.to_string());
    line("seq_dim", format!("{}{}", m.seq_width(), if m.seq_dim.is_none() { " (auto)" } else { "" }));
    line("heads", m.heads.to_string());
    line("chunk_seconds", m.chunk_seconds.to_string());
    line("ffn_factor", m.ffn_factor.to_string());
    line("tdf_factor", m.tdf_factor.to_string());
    line("bottleneck_block", m.bottleneck_block.to_string());
    line("window_size", s.window_size.to_string());
    line("hop", s.hop.to_string());
    line("kept_bins", s.kept_bins.to_string());
    line("sample_rate", s.sample_rate.to_string());
    line("center", s.center.to_string());
    line("lr", t.lr.to_string());
    line("plateau_patience", t.plateau_patience.to_string());
    line("plateau_factor", t.plateau_factor.to_string());
    line("early_stop_patience", t.early_stop_patience.to_string());
    line("batch_size", t.batch_size.to_string());
    line("train_overlap", t.train_overlap.to_string());
    line("infer_overlap", t.infer_overlap.to_string());
    line("seed", t.seed.to_string());
    line(
        "multires_windows",
        t.multires_windows.iter().map(|[w, h]| format!("{w}/{h}")).collect::<Vec<_>>().join(","),
    );
    line("bins_per_band", m.bins_per_band(s.kept_bins).to_string());
    line("band_channels", m.band_channels().to_string());
    line("bottleneck_channels", m.bottleneck_channels().to_string());
    line("head_dim", m.head_dim().to_string());
    line("cutoff_hz", format!("{:.1}", s.cutoff_hz()));
    out
}
