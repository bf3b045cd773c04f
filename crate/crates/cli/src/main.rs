//! `meel`: generate synthetic retrieval data, train the memory enhanced
//! embedding model, and evaluate checkpoints.
//!
//! Machine-readable JSON goes to stdout, everything human-readable to
//! stderr. Exit codes: 0 success, 1 runtime/IO failure, 2 configuration
//! error.

use clap::{Parser, Subcommand, ValueEnum};
use meel_core::checkpoint::{load_checkpoint, save_checkpoint};
use meel_core::datakit::{export_dataset, generate_synthetic, load_dataset, Splits, SynthConfig};
use meel_core::trainer::{evaluate, EvalEncoder, SplitKind, TrainConfig, TrainEvent, Trainer};
use meel_core::MeelError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "meel",
    about = "Memory enhanced embedding learning for cross-modal retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: feature files plus manifest.json.
    Generate {
        /// JSON config file; its `data` section drives the generator.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for feature files and manifest.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train on a dataset manifest and write the best checkpoint.
    Train {
        /// JSON config file; its `train` section holds hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Path to a dataset manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path (written atomically, best epoch by
        /// validation recall sum).
        #[arg(long)]
        out: PathBuf,
        /// JSONL training log path (default: the --out path plus ".log.jsonl").
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Disable the contrastive memory losses.
        #[arg(long)]
        no_infonce: bool,
        /// Disable the text center loss.
        #[arg(long)]
        no_center: bool,
        /// Hard-sync key encoders each step instead of the EMA update.
        #[arg(long)]
        no_momentum: bool,
    },
    /// Print the retrieval report of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Path to a dataset manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// JSON config file; its `eval` section supplies defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which encoder embeds the split (default momentum).
        #[arg(long)]
        encoder: Option<EncoderArg>,
        /// Which split to evaluate (default test).
        #[arg(long)]
        split: Option<SplitArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EncoderArg {
    Momentum,
    Query,
}

impl From<EncoderArg> for EvalEncoder {
    fn from(value: EncoderArg) -> EvalEncoder {
        match value {
            EncoderArg::Momentum => EvalEncoder::Momentum,
            EncoderArg::Query => EvalEncoder::Query,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitKind {
    fn from(value: SplitArg) -> SplitKind {
        match value {
            SplitArg::Train => SplitKind::Train,
            SplitArg::Val => SplitKind::Val,
            SplitArg::Test => SplitKind::Test,
        }
    }
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Failure {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn from_core(err: MeelError) -> Failure {
        Failure {
            code: if err.is_config_error() { 2 } else { 1 },
            message: err.to_string(),
        }
    }
}

/// The one JSON config file: every section optional, unknown keys rejected,
/// omitted fields take the documented defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    data: Option<DataSection>,
    train: Option<TrainConfig>,
    eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataSection {
    n_videos: usize,
    captions_per_video: usize,
    latent_dim: usize,
    video_dim: usize,
    text_dim: usize,
    noise_std: f64,
    seed: Option<u64>,
    /// Optional [train, val, test] video counts; default is a 70/10/20
    /// prefix split.
    split_counts: Option<[usize; 3]>,
}

impl Default for DataSection {
    fn default() -> DataSection {
        let synth = SynthConfig::default();
        DataSection {
            n_videos: synth.n_videos,
            captions_per_video: synth.captions_per_video,
            latent_dim: synth.latent_dim,
            video_dim: synth.video_dim,
            text_dim: synth.text_dim,
            noise_std: synth.noise_std,
            seed: None,
            split_counts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalSection {
    split: SplitKind,
    encoder: EvalEncoder,
}

impl Default for EvalSection {
    fn default() -> EvalSection {
        EvalSection {
            split: SplitKind::Test,
            encoder: EvalEncoder::Momentum,
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::runtime(format!("cannot read config {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
}

fn cmd_generate(config_path: Option<&Path>, out_dir: &Path) -> Result<(), Failure> {
    let config = read_config(config_path)?;
    let data = config.data.unwrap_or_default();
    let seed = match data.seed {
        Some(seed) => seed,
        None => {
            let default_seed = SynthConfig::default().seed;
            eprintln!("seed not set, using default {default_seed}");
            default_seed
        }
    };
    let synth = SynthConfig {
        n_videos: data.n_videos,
        captions_per_video: data.captions_per_video,
        latent_dim: data.latent_dim,
        video_dim: data.video_dim,
        text_dim: data.text_dim,
        noise_std: data.noise_std,
        seed,
    };
    let mut dataset = generate_synthetic(&synth).map_err(Failure::from_core)?;
    if let Some([train, val, test]) = data.split_counts {
        if train + val + test > synth.n_videos {
            return Err(Failure::config(format!(
                "split_counts {train}+{val}+{test} exceed n_videos {}",
                synth.n_videos
            )));
        }
        dataset = dataset
            .with_splits(Splits {
                train: (0..train).collect(),
                val: (train..train + val).collect(),
                test: (train + val..train + val + test).collect(),
            })
            .map_err(Failure::from_core)?;
    }
    let manifest = export_dataset(&dataset, out_dir).map_err(Failure::from_core)?;
    eprintln!(
        "wrote {} videos ({}-dim) and {} captions ({}-dim); splits {}/{}/{}; manifest {}",
        dataset.n_videos(),
        dataset.video_dim(),
        dataset.n_captions(),
        dataset.caption_dim(),
        dataset.splits.train.len(),
        dataset.splits.val.len(),
        dataset.splits.test.len(),
        manifest.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct LogHeader<'a> {
    config: &'a TrainConfig,
    data: String,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config_path: Option<&Path>,
    data_path: &Path,
    out_path: &Path,
    log_path: Option<&Path>,
    seed: Option<u64>,
    no_infonce: bool,
    no_center: bool,
    no_momentum: bool,
) -> Result<(), Failure> {
    let config_file = read_config(config_path)?;
    let mut config = config_file.train.unwrap_or_default();
    // Flags win over the config file.
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if no_infonce {
        config.use_infonce = false;
    }
    if no_center {
        config.use_center = false;
    }
    if no_momentum {
        config.use_momentum = false;
    }
    config.validate().map_err(Failure::from_core)?;

    let dataset = load_dataset(data_path).map_err(Failure::from_core)?;
    let default_log = PathBuf::from(format!("{}.log.jsonl", out_path.display()));
    let log_path = log_path.map_or(default_log, Path::to_path_buf);
    let log_file = fs::File::create(&log_path)
        .map_err(|e| Failure::runtime(format!("cannot create log {}: {e}", log_path.display())))?;
    let mut log = std::io::BufWriter::new(log_file);

    // Fully resolved config first, for provenance.
    let header = LogHeader {
        config: &config,
        data: data_path.display().to_string(),
    };
    writeln!(
        log,
        "{}",
        serde_json::to_string(&header).map_err(|e| Failure::runtime(e.to_string()))?
    )
    .map_err(|e| Failure::runtime(e.to_string()))?;

    let mut log_error: Option<String> = None;
    let mut trainer = Trainer::new(&dataset, config).map_err(Failure::from_core)?;
    let outcome = trainer
        .run(&mut |event| {
            let line = match event {
                TrainEvent::Step(record) => serde_json::to_string(record),
                TrainEvent::Epoch(record) => {
                    eprintln!(
                        "epoch {:>3}: mean loss {:.4}, val rsum {:.1}",
                        record.epoch, record.mean_total, record.val.rsum
                    );
                    serde_json::to_string(record)
                }
            };
            match line {
                Ok(line) => {
                    if let Err(e) = writeln!(log, "{line}") {
                        log_error.get_or_insert(e.to_string());
                    }
                }
                Err(e) => {
                    log_error.get_or_insert(e.to_string());
                }
            }
        })
        .map_err(Failure::from_core)?;
    if let Some(e) = log_error {
        return Err(Failure::runtime(format!("log write failed: {e}")));
    }
    log.flush()
        .map_err(|e| Failure::runtime(format!("log write failed: {e}")))?;

    save_checkpoint(&outcome.best_state, out_path).map_err(Failure::from_core)?;
    eprintln!(
        "best epoch {} (val rsum {:.1}); checkpoint {}",
        outcome.best_epoch,
        outcome.best_val.rsum,
        out_path.display()
    );
    let report =
        serde_json::to_string(&outcome.best_val).map_err(|e| Failure::runtime(e.to_string()))?;
    println!("{report}");
    Ok(())
}

fn cmd_eval(
    checkpoint_path: &Path,
    data_path: &Path,
    config_path: Option<&Path>,
    encoder: Option<EncoderArg>,
    split: Option<SplitArg>,
) -> Result<(), Failure> {
    let config_file = read_config(config_path)?;
    let section = config_file.eval.unwrap_or_default();
    let encoder = encoder.map_or(section.encoder, EvalEncoder::from);
    let split = split.map_or(section.split, SplitKind::from);

    let state = load_checkpoint(checkpoint_path).map_err(Failure::from_core)?;
    let dataset = load_dataset(data_path).map_err(Failure::from_core)?;
    for (what, expected, actual) in [
        (
            "video feature dimension",
            state.video_encoder.input_dim(),
            dataset.video_dim(),
        ),
        (
            "caption feature dimension",
            state.text_encoder.input_dim(),
            dataset.caption_dim(),
        ),
    ] {
        if expected != actual {
            return Err(Failure::config(format!(
                "{what}: checkpoint expects {expected}, dataset has {actual}"
            )));
        }
    }
    let report = evaluate(&state, &dataset, split, encoder).map_err(Failure::from_core)?;
    let json = serde_json::to_string(&report).map_err(|e| Failure::runtime(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { config, out_dir } => cmd_generate(config.as_deref(), &out_dir),
        Command::Train {
            config,
            data,
            out,
            log,
            seed,
            no_infonce,
            no_center,
            no_momentum,
        } => cmd_train(
            config.as_deref(),
            &data,
            &out,
            log.as_deref(),
            seed,
            no_infonce,
            no_center,
            no_momentum,
        ),
        Command::Eval {
            checkpoint,
            data,
            config,
            encoder,
            split,
        } => cmd_eval(&checkpoint, &data, config.as_deref(), encoder, split),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
