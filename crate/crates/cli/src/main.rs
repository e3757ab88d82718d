//! `codeclm`: the image-as-JPEG-bytes pipeline from the command line.

mod commands;
mod config;
mod inspect;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] codeclm::Error),
    #[error("{0}")]
    Usage(String),
}

impl From<codeclm::image::ImageError> for CliError {
    fn from(e: codeclm::image::ImageError) -> Self {
        Self::Core(e.into())
    }
}

impl From<codeclm::jpeg::JpegError> for CliError {
    fn from(e: codeclm::jpeg::JpegError) -> Self {
        Self::Core(e.into())
    }
}

impl From<codeclm::lm::LmError> for CliError {
    fn from(e: codeclm::lm::LmError) -> Self {
        Self::Core(e.into())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        use codeclm::Error as E;
        match self {
            Self::Usage(_) => "usage",
            Self::Core(e) => match e {
                E::Io { .. } => "io",
                E::Jpeg(_) => "jpeg",
                E::Image(_) => "image",
                E::Bpe(_) => "bpe",
                E::Lm(_) => "model",
                E::NonFiniteLoss { .. } => "training",
                E::Format { .. } => "format",
                E::EmptyCorpus => "data",
                E::Mismatch(_) => "mismatch",
                E::Config(_) => "config",
                E::Data(_) => "data",
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "codeclm", version, about = "Generate images by modeling their JPEG bytes")]
#[command(after_help = "Log verbosity is read from CODECLM_LOG (error, warn, info, debug, trace).")]
struct Cli {
    /// Run configuration file (TOML); defaults apply to missing keys
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for the stage being run
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SamplingArgs {
    /// Keep only the K most likely tokens (0 = off)
    #[arg(long, value_name = "K")]
    top_k: Option<usize>,
    /// Nucleus mass in (0, 1]
    #[arg(long, value_name = "P")]
    top_p: Option<f64>,
    /// Softmax temperature (0 = argmax)
    #[arg(long, value_name = "T")]
    temperature: Option<f64>,
    /// Cap on generated tokens per sample
    #[arg(long, value_name = "N")]
    max_new_tokens: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Checkpoint to load (default: latest under <work>/train)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Vocabulary file (default: <work>/vocab.txt)
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Table-set sidecar (default: built from the profile)
    #[arg(long, value_name = "FILE")]
    tables: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut a desk-scale image set out of the bundled photographs
    MakeDeskCorpus {
        /// Directory of source photographs
        #[arg(long, value_name = "DIR")]
        photos: Option<PathBuf>,
        /// Side of each square crop
        #[arg(long, value_name = "PX")]
        size: Option<u32>,
        /// Number of training crops
        #[arg(long, value_name = "N")]
        count: Option<usize>,
    },
    /// Encode images to canonical streams plus the shared table sidecar
    EncodeCorpus {
        /// Directory of images (PNG or raw)
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
    },
    /// Learn a byte-pair vocabulary from canonical streams
    TrainBpe {
        /// Directory of canonical streams from encode-corpus
        #[arg(long, value_name = "DIR")]
        streams: Option<PathBuf>,
        /// Vocabulary size including bytes and specials
        #[arg(long, value_name = "N")]
        vocab_size: Option<usize>,
    },
    /// Tokenize images into a chunked token store
    BuildStore {
        /// Directory of images to encode and tokenize
        #[arg(long, value_name = "DIR", conflicts_with = "streams")]
        images: Option<PathBuf>,
        /// Directory of canonical streams instead of images
        #[arg(long, value_name = "DIR")]
        streams: Option<PathBuf>,
        /// Vocabulary file (default: <work>/vocab.txt)
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        /// Tokens per training sequence
        #[arg(long, value_name = "N")]
        context_len: Option<usize>,
    },
    /// Train the transformer on a token store
    Train {
        /// Token store directory (default: <work>/store)
        #[arg(long, value_name = "DIR")]
        store: Option<PathBuf>,
        /// Held-out store scored at every checkpoint
        #[arg(long, value_name = "DIR")]
        heldout: Option<PathBuf>,
        /// Vocabulary file, needed with --heldout
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        /// Total optimizer steps
        #[arg(long, value_name = "N")]
        steps: Option<u64>,
        /// Continue from this checkpoint
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
    },
    /// Draw unconditional samples and restore them to JPEG files
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Number of samples
        #[arg(long, value_name = "N")]
        n_samples: Option<usize>,
    },
    /// Keep the top part of an image and let the model finish it
    Complete {
        /// Image to complete (JPEG under the active profile, PNG or raw)
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Fraction of MCUs kept as the prompt
        #[arg(long, value_name = "R", default_value_t = 0.5)]
        ratio: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Bits per byte of a held-out token store
    EvalBpb {
        /// Token store (default: <work>/heldout_store)
        #[arg(long, value_name = "DIR")]
        store: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Fraction of unconditional samples that restore without salvage
    EvalDecodeRate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Number of samples
        #[arg(long, value_name = "N")]
        n_samples: Option<usize>,
    },
    /// Fréchet distance between two image sets or embedding files
    EvalFrechet {
        /// First set: image directory or embeddings file
        #[arg(long, value_name = "PATH")]
        a: PathBuf,
        /// Second set: image directory or embeddings file
        #[arg(long, value_name = "PATH")]
        b: PathBuf,
        /// Images used from each directory (0 = all)
        #[arg(long, value_name = "N")]
        n_samples: Option<usize>,
    },
    /// Print the segment table and MCU map of a JPEG file or canonical stream
    Inspect {
        /// File to inspect
        file: PathBuf,
    },
    /// Tile images into one PNG
    Gallery {
        /// Directory of JPEG/PNG images (default: <work>/samples)
        #[arg(long, value_name = "DIR")]
        inputs: Option<PathBuf>,
        /// Images per row
        #[arg(long, value_name = "N", default_value_t = 8)]
        cols: usize,
        /// Number of images to tile (0 = all)
        #[arg(long, value_name = "N")]
        n_samples: Option<usize>,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CODECLM_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Ctx {
        cfg,
        seed: cli.seed,
        out: cli.out,
    };
    use Command as C;
    match cli.command {
        C::MakeDeskCorpus { photos, size, count } => commands::make_desk_corpus(ctx, photos, size, count),
        C::EncodeCorpus { images } => commands::encode_corpus(ctx, images),
        C::TrainBpe { streams, vocab_size } => commands::train_bpe(ctx, streams, vocab_size),
        C::BuildStore {
            images,
            streams,
            vocab,
            context_len,
        } => commands::build_store(ctx, images, streams, vocab, context_len),
        C::Train {
            store,
            heldout,
            vocab,
            steps,
            resume,
        } => commands::train(ctx, store, heldout, vocab, steps, resume),
        C::Sample {
            model,
            sampling,
            n_samples,
        } => commands::sample(ctx, model, sampling, n_samples),
        C::Complete {
            image,
            ratio,
            model,
            sampling,
        } => commands::complete(ctx, image, ratio, model, sampling),
        C::EvalBpb { store, model } => commands::eval_bpb(ctx, store, model),
        C::EvalDecodeRate {
            model,
            sampling,
            n_samples,
        } => commands::eval_decode_rate(ctx, model, sampling, n_samples),
        C::EvalFrechet { a, b, n_samples } => commands::eval_frechet(ctx, a, b, n_samples),
        C::Inspect { file } => inspect::run(&file),
        C::Gallery {
            inputs,
            cols,
            n_samples,
        } => commands::gallery(ctx, inputs, cols, n_samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error[{}]: {shown}", e.kind());
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let msg = s.to_string();
                // most wrappers already embed their source's message
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                    shown = msg;
                }
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
