//! `gal`: config-driven runner for generate-annotate-learn experiments.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use gal_core::diagnostics::Averaging;

use crate::commands::{Candidate, SynthesisSource};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "gal", version, about = "Generate, annotate, learn: synthetic-data self-training and distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set pipeline.k=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        config::load(&self.config, &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a generator with dev-set grid selection and write a checkpoint.
    FitGenerator {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training corpus; defaults to the task's train split.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Selection corpus; defaults to the task's dev split.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Sample an unlabeled synthetic dataset from a generator checkpoint.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples; defaults to 40 times the labeled set size.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the configured pipeline for every seed.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long, env = "GAL_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a saved classifier.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Labeled JSONL; defaults to the task's test split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Diagnostics on synthetic data and annotations.
    Diag {
        #[command(subcommand)]
        which: Diag,
    },
}

#[derive(Debug, Subcommand)]
enum Diag {
    /// Unique and shared word n-grams of two text corpora, as CSV.
    NgramOverlap {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4])]
        orders: Vec<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, precision, recall and F1 between two labelings.
    Agreement {
        #[command(flatten)]
        config: ConfigArgs,
        /// Labeled JSONL holding the reference labels.
        #[arg(long)]
        reference: PathBuf,
        /// Labeled JSONL holding the candidate labels.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        candidate: Option<PathBuf>,
        /// Classifier whose predictions on the reference inputs are compared.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1, conflicts_with = "macro_average")]
        positive_class: usize,
        /// Macro-average over classes instead of a binary positive class.
        #[arg(long = "macro")]
        macro_average: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Rejection, dedup and retention rates of a generation.
    Synthesis {
        /// Run report JSON.
        #[arg(long, conflicts_with = "stats", required_unless_present = "stats")]
        report: Option<PathBuf>,
        /// Stats JSON written by `generate`.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::FitGenerator {
            config,
            corpus,
            dev,
            seed,
            out,
        } => commands::cmd_fit_generator(&config.load()?, corpus.as_deref(), dev.as_deref(), seed, &out),
        Command::Generate {
            config,
            checkpoint,
            count,
            seed,
            out,
        } => commands::cmd_generate(&config.load()?, &checkpoint, count, seed, &out),
        Command::Run { config, output_dir } => {
            let mut cfg = config.load()?;
            if let Some(dir) = output_dir {
                cfg.output_dir = std::path::absolute(&dir).map_err(|e| CliError::config(e.to_string()))?;
            }
            let s = commands::cmd_run(&cfg)?;
            println!(
                "{}: final test accuracy {:.4} ± {:.4} (base {:.4} ± {:.4}) over {} seed(s)",
                cfg.output_dir.display(),
                s.final_test_accuracy.mean,
                s.final_test_accuracy.stderr,
                s.base_test_accuracy.mean,
                s.base_test_accuracy.stderr,
                s.seeds.len()
            );
            Ok(())
        }
        Command::Eval {
            config,
            model,
            data,
            seed,
            out,
        } => commands::cmd_eval(&config.load()?, &model, data.as_deref(), seed, out.as_deref()).map(|_| ()),
        Command::Diag { which } => match which {
            Diag::NgramOverlap {
                config,
                train,
                synthetic,
                orders,
                out,
            } => commands::cmd_ngram_overlap(&config.load()?, &train, &synthetic, &orders, out.as_deref()),
            Diag::Agreement {
                config,
                reference,
                candidate,
                model,
                positive_class,
                macro_average,
                out,
            } => {
                let cand = match (&candidate, &model) {
                    (Some(p), _) => Candidate::Labels(p),
                    (None, Some(p)) => Candidate::Model(p),
                    (None, None) => unreachable!("clap requires one of --candidate and --model"),
                };
                let averaging = if macro_average {
                    Averaging::Macro
                } else {
                    Averaging::Binary { positive_class }
                };
                commands::cmd_agreement(&config.load()?, &reference, cand, averaging, out.as_deref())
            }
            Diag::Synthesis { report, stats, out } => {
                let source = match (&report, &stats) {
                    (Some(p), _) => SynthesisSource::Report(p),
                    (None, Some(p)) => SynthesisSource::Stats(p),
                    (None, None) => unreachable!("clap requires one of --report and --stats"),
                };
                commands::cmd_synthesis(source, out.as_deref())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
