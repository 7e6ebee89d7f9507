use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bandsep_core::config::{describe, Preset};
use bandsep_core::runtime::{chunk_samples, evaluate_corpus, Manifest, ReportMetadata, StemModels};
use bandsep_core::{
    count_parameters, load_config, read_wav, separate, write_wav, Checkpoint, Config, Corpus, Error, Result, Stem,
    Trainer, SAMPLE_RATE,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bandsep", version, about = "Lightweight band-split music source separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture preset, overriding the config's model table.
    #[arg(long)]
    preset: Option<Preset>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => Config::default(),
        };
        if let Some(p) = self.preset {
            cfg.model = p.model();
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a single-stem model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        stem: Stem,
        /// Corpus root. If it holds `train/` and `valid/`, those are used.
        #[arg(long)]
        data: PathBuf,
        /// Validation corpus (overrides `<data>/valid`).
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/last.msl` when present.
        #[arg(long)]
        resume: bool,
    },
    /// Separate a stereo 44.1 kHz WAV file into stems.
    Separate {
        input: PathBuf,
        /// TOML manifest mapping stem names to checkpoint files.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk_seconds: Option<f64>,
    },
    /// Score checkpoints on a corpus and write a JSON report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        chunk_seconds: Option<f64>,
    },
    /// Print the trainable parameter count.
    Params {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print every resolved config field.
    Describe {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn train_dirs(data: &Path, valid: Option<PathBuf>) -> Result<(PathBuf, PathBuf)> {
    let split = data.join("train");
    let (train, default_valid) =
        if split.is_dir() { (split, Some(data.join("valid"))) } else { (data.to_path_buf(), None) };
    match valid.or(default_valid) {
        Some(v) => Ok((train, v)),
        None => Err(Error::Corpus(format!(
            "{}: no train/ and valid/ subdirectories; pass --valid",
            data.display()
        ))),
    }
}

fn train(cfg: &ConfigArgs, stem: Stem, data: &Path, valid: Option<PathBuf>, out: &Path, resume: bool) -> Result<()> {
    let (train_dir, valid_dir) = train_dirs(data, valid)?;
    let train_set = Corpus::open(&train_dir)?;
    let valid_set = Corpus::open(&valid_dir)?;
    let last = out.join("last.msl");
    let mut trainer = if resume && last.exists() {
        let ck = Checkpoint::load(&last)?;
        if ck.stem != stem {
            return Err(Error::Checkpoint(format!("{} was trained for {}, not {stem}", last.display(), ck.stem)));
        }
        log::info!("resuming from {} at epoch {}", last.display(), ck.state.epoch);
        Trainer::from_checkpoint(ck)?
    } else {
        Trainer::new(cfg.resolve()?, stem)?
    };
    let records = trainer.fit(&train_set, &valid_set, out)?;
    match trainer.state.best_epoch {
        Some(e) => println!("trained {} epochs; best epoch {e}, cSDR {:?}", records.len(), trainer.state.best_val_csdr),
        None => println!("trained {} epochs", records.len()),
    }
    Ok(())
}

/// Loads every checkpoint of a manifest. Returns the models, the metadata
/// path strings and the chunk length implied by the first model.
fn load_models(manifest: &Path, chunk_seconds: Option<f64>) -> Result<(StemModels, ReportMetadata)> {
    let manifest = Manifest::load(manifest)?;
    let mut models = StemModels::default();
    let mut meta = ReportMetadata::default();
    let mut chunk = None;
    for (stem, path) in &manifest.checkpoints {
        let ck = Checkpoint::load(path)?;
        if ck.stem != *stem {
            log::warn!("{} was trained for {}, used for {stem}", path.display(), ck.stem);
        }
        let secs = chunk_seconds.unwrap_or(ck.config.model.chunk_seconds);
        let len = chunk_samples(secs, ck.config.stft.sample_rate);
        if *chunk.get_or_insert(len) != len {
            return Err(Error::Invariant("checkpoints disagree on chunk length; pass --chunk-seconds".into()));
        }
        meta.config.get_or_insert_with(|| ck.config.to_toml_string());
        meta.checkpoints.insert(*stem, path.display().to_string());
        let net = ck.network()?;
        models.insert(*stem, Box::new(net), path.display().to_string());
    }
    meta.chunk_samples = chunk.expect("manifest is non-empty");
    Ok((models, meta))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, stem, data, valid, out, resume } => train(&config, stem, &data, valid, &out, resume),
        Command::Separate { input, checkpoints, out, chunk_seconds } => {
            let (wave, sr) = read_wav(&input)?;
            if sr != SAMPLE_RATE {
                return Err(Error::Corpus(format!("{}: sample rate {sr}, expected {SAMPLE_RATE}", input.display())));
            }
            let (models, meta) = load_models(&checkpoints, chunk_seconds)?;
            let result = separate(&wave, &models, meta.chunk_samples)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (stem, w) in &result.stems {
                let path = out.join(format!("{stem}.wav"));
                write_wav(&path, w, SAMPLE_RATE)?;
                println!("{}", path.display());
            }
            let prov: BTreeMap<_, _> = models.provenance.iter().map(|(s, p)| (s.name(), p.as_str())).collect();
            let path = out.join("provenance.json");
            std::fs::write(&path, serde_json::to_string_pretty(&prov)?).map_err(|e| Error::io(&path, e))
        }
        Command::Evaluate { data, checkpoints, report, chunk_seconds } => {
            let (models, meta) = load_models(&checkpoints, chunk_seconds)?;
            let r = evaluate_corpus(&data, &models, meta.chunk_samples, meta)?;
            r.write(&report)?;
            for (stem, m) in &r.medians {
                println!("{stem}: {}", m.map_or("n/a".to_string(), |v| format!("{v:.3} dB")));
            }
            if let Some(avg) = r.average {
                println!("average: {avg:.3} dB");
            }
            if !r.skipped.is_empty() {
                println!("skipped {} song(s)", r.skipped.len());
            }
            Ok(())
        }
        Command::Params { config } => {
            let cfg = config.resolve()?;
            println!("{}", count_parameters(&cfg.model, &cfg.stft)?);
            Ok(())
        }
        Command::Describe { config } => {
            print!("{}", describe(&config.resolve()?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
