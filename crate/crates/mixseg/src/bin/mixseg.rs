//! Experiment CLI: synthetic dataset generation, mean-teacher training runs,
//! strategy/fraction sweeps, and checkpoint evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use mixseg::cli::{cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, TrainOverrides};
use mixseg::config::Strategy;

#[derive(Parser)]
#[command(
    name = "mixseg",
    about = "Mask-based mixing augmentation and mean-teacher semi-supervised segmentation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shapes dataset (PPM images, PGM labels, split manifest).
    GenData {
        /// JSON config path.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one training experiment.
    Train {
        /// JSON config path.
        #[arg(long)]
        config: PathBuf,
        /// Print the resolved config and iteration plan without training.
        #[arg(long)]
        dry_run: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the mixing strategy (cutmix|classmix|complexmix|none).
        #[arg(long)]
        strategy: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the total iteration count.
        #[arg(long)]
        total_iters: Option<usize>,
        /// Override the labeled fraction.
        #[arg(long)]
        labeled_fraction: Option<f64>,
        /// Override the unsupervised loss weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// Override the confidence threshold.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run the strategies x fractions x seeds grid and aggregate a summary table.
    Sweep {
        /// JSON config path.
        #[arg(long)]
        config: PathBuf,
        /// Skip cells that already have rows in results.csv.
        #[arg(long)]
        resume: bool,
        /// Parallel worker count (default: min(cores, 4)).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset's validation split.
    Eval {
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::GenData { config } => cmd_gen_data(&config).map(|_| ()),
        Command::Train {
            config,
            dry_run,
            seed,
            strategy,
            out_dir,
            total_iters,
            labeled_fraction,
            lambda,
            tau,
        } => {
            let strategy = match strategy.map(|s| s.parse::<Strategy>()).transpose() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let overrides = TrainOverrides {
                seed,
                strategy,
                out_dir,
                total_iters,
                labeled_fraction,
                lambda,
                tau,
                dry_run,
            };
            cmd_train(&config, &overrides).map(|_| ())
        }
        Command::Sweep {
            config,
            resume,
            jobs,
        } => cmd_sweep(&config, resume, jobs).map(|_| ()),
        Command::Eval {
            checkpoint,
            dataset,
        } => cmd_eval(&checkpoint, &dataset).map(|_| ()),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
