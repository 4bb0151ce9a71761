use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xmaug::experiment::{run_ablate, run_eval, run_synth, run_train, EvalFlags};
use xmaug::{Error, ExperimentConfig};

/// Cross-modal augmentation experiments on synthetic long-tailed data.
#[derive(Debug, Parser)]
#[command(name = "xmaug", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the source/target training sets and the target test set.
    Synth(RunArgs),
    /// Train on the generated data and write a checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint on the target test set.
    Eval(EvalArgs),
    /// Train and evaluate every ablation row over the configured seeds.
    Ablate(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory for all outputs.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Classify from image embeddings alone, ignoring sample text.
    #[arg(long)]
    image_only_eval: bool,
    /// Write embeddings of every sample to embeddings.csv.
    #[arg(long)]
    export_embeddings: bool,
    /// Project exported embeddings onto two principal components.
    #[arg(long)]
    pca2d: bool,
}

/// Process exit status for a failed command.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::TrainingDiverged { .. } => 3,
        Error::ReadError { .. } | Error::WriteError { .. } => 5,
        _ => 4,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    // an unreadable configuration is a configuration problem, not a data one
    let mut config = ExperimentConfig::load(path).map_err(|e| match e {
        Error::ReadError { path, source } => {
            Error::InvalidConfig(format!("cannot read {}: {source}", path.display()))
        }
        other => other,
    })?;
    if let Some(seed) = seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(args) => {
            let config = load_config(&args.config, args.seed)?;
            let manifest = run_synth(&config, &args.out)?;
            for f in &manifest.files {
                println!("{:<18} {:>6} samples", f.name, f.samples);
            }
            println!(
                "imbalance ratio {} (seed {})",
                manifest.source_imbalance_ratio, manifest.seed
            );
        }
        Command::Train(args) => {
            let config = load_config(&args.config, args.seed)?;
            let history = run_train(&config, &args.out)?;
            if let Some(last) = history.epochs.last() {
                println!(
                    "epoch {}: loss {:.4}, source top-1 {:.3}, target top-1 {:.3}",
                    last.epoch + 1,
                    last.total_loss,
                    last.source_train_top1,
                    last.target_train_top1
                );
            }
        }
        Command::Eval(args) => {
            let config = load_config(&args.run.config, args.run.seed)?;
            let flags = EvalFlags {
                image_only: args.image_only_eval,
                export_embeddings: args.export_embeddings,
                pca2d: args.pca2d,
            };
            let report = run_eval(&config, &args.run.out, flags)?;
            println!(
                "top-1 {:.4}  top-5 {:.4}  ({} test samples)",
                report.top1_all, report.top5_all, report.num_test
            );
        }
        Command::Ablate(args) => {
            let config = load_config(&args.config, args.seed)?;
            let table = run_ablate(&config, &args.out)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
