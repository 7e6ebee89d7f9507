//! Lightweight band-split music source separation.
//!
//! A stereo mixture is transformed to a packed complex spectrogram, split
//! into frequency subbands stacked on the channel axis, processed by a
//! grouped-convolution U-Net with a rotary-attention dual-path bottleneck and
//! synthesized back to a waveform per stem.

pub mod audio;
pub mod augment;
pub mod bandsplit;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod network;
pub mod ops;
pub mod params;
pub mod runtime;
pub mod seqmodel;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use audio::{read_wav, write_wav, Stem, StemSet, Waveform, SAMPLE_RATE};
pub use bandsplit::{band_merge, band_split, BandedTensor, SplitConv};
pub use checkpoint::Checkpoint;
pub use config::{load_config, Config, ModelConfig, Preset, StftConfig, TrainConfig};
pub use dataset::{Corpus, Dataset, MemoryDataset};
pub use error::{Error, Result};
pub use losses::{total_loss, LossBreakdown};
pub use network::{count_parameters, Network};
pub use runtime::{csdr_song, evaluate, sdr, separate, EvalReport, SpectrogramModel};
pub use spectral::{istft, stft, ComplexSpectrogram};
pub use tensor::Tensor;
pub use trainer::Trainer;
