//! `svl`: zero- and low-shot classification experiments over embedding files.

mod commands;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svl_core::eval::ReportFormat;
use svl_core::experiment::Method;
use svl_core::synthetic::SyntheticDatasetSpec;
use svl_core::Error;

use options::ExperimentArgs;

#[derive(Debug, Parser)]
#[command(
    name = "svl",
    version,
    about = "Zero- and low-shot classification in embedding space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate embedding and label files, or every file a manifest names.
    ExtractCheck {
        files: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Zero-shot top-1 on the test split, with the confidence histogram.
    Zeroshot {
        #[command(flatten)]
        args: ExperimentArgs,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Train and evaluate one method on one (shots, seed) cell.
    Adapt {
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Blending-weight tools.
    Lambda {
        #[command(subcommand)]
        action: LambdaAction,
    },
    /// Select confident zero-shot pseudolabels on the test split.
    Pseudo {
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Run the full (shots x seeds) grid and write results and reports.
    Run {
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Aggregate one or more results.csv files into a report.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// csv | markdown
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a two-view Gaussian-cluster dataset for trying the pipeline.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        train_per_class: usize,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum LambdaAction {
    /// Mean zero-shot confidence over the test split.
    Estimate {
        #[command(flatten)]
        args: ExperimentArgs,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Validation sweep for one (shots, seed) cell of the SVL adapter.
    Sweep {
        #[command(flatten)]
        args: ExperimentArgs,
    },
}

fn dispatch(command: Command) -> svl_core::Result<()> {
    match command {
        Command::ExtractCheck { files, manifest } => commands::extract_check(&files, manifest.as_deref()),
        Command::Zeroshot { args, bins } => commands::zeroshot(&args.resolve(Method::ZeroShot)?, bins),
        Command::Adapt { args } => commands::adapt(&args.resolve_with(Method::SvlAdapter, &[16], &[0])?),
        Command::Lambda { action } => match action {
            LambdaAction::Estimate { args, bins } => commands::lambda_estimate(&args.resolve(Method::ZeroShot)?, bins),
            LambdaAction::Sweep { args } => {
                commands::lambda_sweep(&args.resolve_with(Method::SvlAdapter, &[16], &[0])?)
            }
        },
        Command::Pseudo { args } => commands::pseudo(&args.resolve(Method::ZeroShotSvl)?),
        Command::Run { args } => commands::run_grid(&args.resolve(Method::SvlAdapter)?),
        Command::Report { results, format, out } => {
            commands::report(&results, format.parse::<ReportFormat>()?, out.as_deref())
        }
        Command::Synth {
            out,
            classes,
            train_per_class,
            test_per_class,
            seed,
        } => {
            let spec = SyntheticDatasetSpec {
                num_classes: classes,
                train_per_class,
                test_per_class,
                seed,
                ..Default::default()
            };
            commands::synth(&out, &spec)
        }
    }
}

/// 2: bad flags or configuration; 3: filesystem; 4: malformed input data;
/// 1: anything else.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::LambdaOutOfRange(_) => 2,
        Error::Io { .. } => 3,
        Error::Format { .. } | Error::Manifest(_) | Error::InvalidLabel { .. } | Error::DimensionMismatch { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::debug!("{err:?}");
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
