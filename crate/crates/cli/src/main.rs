//! `trajconv` command-line front end.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajconv::Error;

#[derive(Parser)]
#[command(name = "trajconv", version, about = "Pedestrian trajectory forecasting: train, cross-validate, evaluate, benchmark")]
struct Cli {
    /// Output directory [default: a new directory under $TRAJCONV_RUN_ROOT, or ./runs]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus flags mirroring its keys; flags win over the file.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any key, e.g. `--set social.l=8` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// train.preset: eth_ucy | trajnet
    #[arg(long)]
    pub preset: Option<String>,
    /// model.family: conv1d | conv2d | lstm | encdec
    #[arg(long)]
    pub model: Option<String>,
    /// model.kernel_size
    #[arg(long)]
    pub ks: Option<usize>,
    /// model.positional_embedding
    #[arg(long)]
    pub pe: bool,
    /// model.residual
    #[arg(long)]
    pub rc: bool,
    /// model.transpose_conv
    #[arg(long)]
    pub tc: bool,
    /// prep.norm_mode: abs | t0 | tobs | rel
    #[arg(long)]
    pub norm: Option<String>,
    /// prep.augment: comma list of rotate, mirror, noise (or `none`)
    #[arg(long, value_delimiter = ',')]
    pub augment: Option<Vec<String>>,
    /// prep.noise_sigma
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// social.kind: none | square_grid | circular_map | angular_grid
    #[arg(long)]
    pub social: Option<String>,
    /// train.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// train.base_lr
    #[arg(long)]
    pub lr: Option<f64>,
    /// train.gamma
    #[arg(long)]
    pub gamma: Option<f64>,
    /// train.step
    #[arg(long)]
    pub step: Option<usize>,
    /// train.batch_size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// train.seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and window every configured scene; cache samples and print a summary
    Ingest {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one model
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Scenes to train on [default: every labeled scene]
        #[arg(long, value_delimiter = ',')]
        scenes: Vec<String>,
        /// Hold out data.holdout_fraction of the pedestrians and evaluate on them
        #[arg(long)]
        holdout: bool,
        /// Continue from a checkpoint written with the same settings
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Leave-one-scene-out cross-validation
    Xval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seeds to average over [default: train.seed]
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Folds trained concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint on labeled scenes
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenes to evaluate [default: every configured scene]
        #[arg(long, value_delimiter = ',')]
        scenes: Vec<String>,
        /// Evaluate on the held-out pedestrians of the chosen scenes
        #[arg(long)]
        holdout: bool,
        #[arg(long, default_value_t = 10)]
        worst_k: usize,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
    },
    /// Inference latency per element
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model families, optionally with a kernel size (`conv2d-ks3`)
        #[arg(long, value_delimiter = ',', default_value = "conv2d,lstm,encdec")]
        models: Vec<String>,
        /// Checkpoints to time instead of freshly initialized models
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,32")]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        repeats: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Merge fold or per-sample CSVs into comparison tables and error summaries
    Report {
        /// `folds.csv` files from xval and/or per-sample error CSVs
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Row labels, one per input [default: parent directory names]
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Build(_) => 2,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::DuplicateRecord { .. }
        | Error::Unlabeled(_)
        | Error::Corrupt { .. }
        | Error::Version { .. }
        | Error::InvalidBatch(_) => 3,
        Error::NonFiniteLoss { .. } | Error::Optimizer { .. } | Error::Dimension(_) | Error::Contract(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.as_deref();
    let result = match cli.command {
        Command::Ingest { cfg } => commands::ingest(&cfg, out),
        Command::Train { cfg, scenes, holdout, resume } => commands::train(&cfg, out, &scenes, holdout, resume.as_deref()),
        Command::Xval { cfg, seeds, jobs } => commands::xval(&cfg, out, &seeds, jobs),
        Command::Eval { cfg, checkpoint, scenes, holdout, worst_k, bin_width } => {
            commands::eval(&cfg, out, &checkpoint, &scenes, holdout, worst_k, bin_width)
        }
        Command::Bench { cfg, models, checkpoints, batch, repeats, warmup } => {
            commands::bench(&cfg, out, &models, &checkpoints, &batch, repeats, warmup)
        }
        Command::Report { inputs, labels, bin_width } => commands::report(out, &inputs, &labels, bin_width),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
