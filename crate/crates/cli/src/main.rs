//! `mpkit`: corpus generation, training, evaluation and the downstream
//! tasks of the motion prior, one run directory per invocation.

mod commands;
mod run;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpkit::prior::TrainConfig;
use mpkit::tasks::InfillOptimizer;
use mpkit::{Error, ErrorCategory, Result};

use commands::{InfillArgs, Split};
use run::Run;
use settings::Settings;

#[derive(Parser)]
#[command(name = "mpkit", version, about = "Frequency-guided motion prior toolkit")]
struct Cli {
    /// `key = value` configuration file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command (corpus seed for `gen`, training
    /// seed for `train`, sampling seed for `sample`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion corpus.
    Gen,
    /// Train the prior.
    Train {
        /// Corpus directory written by `gen`; generated in memory if omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Continue from a checkpoint with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruction metrics of a checkpoint on a corpus split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Decode motions drawn from the prior.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
    },
    /// Decode a latent interpolated between two clips.
    Interp {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip_a: PathBuf,
        #[arg(long)]
        clip_b: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
    },
    /// Fill missing frames by latent optimization.
    Infill {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Problem file (motion plus per-frame known mask).
        #[arg(long, conflicts_with = "clip")]
        problem: Option<PathBuf>,
        /// Motion file; a centered gap of `--missing` frames is masked.
        #[arg(long)]
        clip: Option<PathBuf>,
        #[arg(long)]
        missing: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        /// `gd` or `adam`.
        #[arg(long)]
        optimizer: Option<InfillOptimizer>,
    },
    /// Export the sequence and segment spectra of a clip.
    Spectra {
        #[arg(long)]
        clip: PathBuf,
    },
    /// Finite-difference check of every primitive and the full loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sample { .. } => "sample",
            Command::Interp { .. } => "interp",
            Command::Infill { .. } => "infill",
            Command::Spectra { .. } => "spectra",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("MPKIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("MPKIT_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    // Gradient checks default to the tiny model; everything else to the full one.
    let base = match cli.command {
        Command::Gradcheck { .. } => TrainConfig::tiny(),
        _ => TrainConfig::default(),
    };
    let mut settings = Settings::load(cli.config.as_deref(), base)?;
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Gen => settings.gen.corpus_seed = seed,
            _ => settings.train.seed = seed,
        }
    }
    let seed = match cli.command {
        Command::Gen => settings.gen.corpus_seed,
        _ => settings.train.seed,
    };
    let mut run = Run::create(&cli.out, cli.command.name(), seed, &settings.render())?;
    if let Some(path) = &cli.config {
        run.input("config_file", path)?;
    }
    log::info!("run directory {}", run.dir.display());
    let outcome = match &cli.command {
        Command::Gen => commands::gen(&mut run, &settings),
        Command::Train { corpus, resume } => commands::train(&mut run, &settings, corpus.as_deref(), resume.as_deref()),
        Command::Eval { checkpoint, split, corpus } => {
            commands::eval(&mut run, &settings, checkpoint, *split, corpus.as_deref())
        }
        Command::Sample { checkpoint, n } => commands::sample_cmd(&mut run, checkpoint, *n, seed),
        Command::Interp { checkpoint, clip_a, clip_b, t } => commands::interp(&mut run, checkpoint, clip_a, clip_b, *t),
        Command::Infill { checkpoint, problem, clip, missing, iterations, step, optimizer } => commands::infill_cmd(
            &mut run,
            &settings,
            checkpoint,
            InfillArgs {
                problem: problem.as_deref(),
                clip: clip.as_deref(),
                missing: *missing,
                iterations: *iterations,
                step: *step,
                optimizer: *optimizer,
            },
        ),
        Command::Spectra { clip } => commands::spectra(&mut run, &settings, clip),
        Command::Gradcheck { threshold } => commands::gradcheck(&mut run, &settings, seed, *threshold),
    };
    let dir = run.finish(&outcome)?;
    println!("run: {}", dir.display());
    outcome
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
        ErrorCategory::Io => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({:?}): {e}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
