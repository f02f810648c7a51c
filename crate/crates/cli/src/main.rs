use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leadtime::experiment::{cmd_curves, cmd_evaluate, cmd_synth, cmd_train, EvalMode, Split};

#[derive(Debug, Parser)]
#[command(name = "leadtime", version, about = "Predict the lead time to a dialogue partner's next initiation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus a per-epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint or a baseline on one split.
    Evaluate(EvaluateArgs),
    /// Turn an evaluation report CSV into aligned curve tables.
    Curves {
        /// Report CSV written by `evaluate`.
        report: PathBuf,
        /// Destination; defaults to `<report stem>.curves.csv` next to the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write `splits.json` with this many train, val and test dialogues, e.g. `200,20,20`.
        #[arg(long, value_parser = parse_sizes)]
        splits: Option<[usize; 3]>,
    },
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, conflicts_with_all = ["silence_baseline", "oracle"], required_unless_present_any = ["silence_baseline", "oracle"])]
    checkpoint: Option<PathBuf>,
    /// Evaluate the 700 ms silence baseline instead of a checkpoint.
    #[arg(long, conflicts_with = "oracle")]
    silence_baseline: bool,
    /// Evaluate the ground-truth labels as predictions (pipeline sanity check).
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: leadtime::Error| e.to_string())
}

fn parse_sizes(s: &str) -> Result<[usize; 3], String> {
    let sizes = s
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    <[usize; 3]>::try_from(sizes).map_err(|v| format!("expected three sizes, got {}", v.len()))
}

fn run(cli: Cli) -> leadtime::Result<()> {
    match cli.command {
        Command::Train { config, seed } => {
            let summary = cmd_train(&config, seed)?;
            println!(
                "best epoch {} -> {}",
                summary.best_epoch,
                summary.best_checkpoint.display()
            );
        }
        Command::Evaluate(args) => {
            let mode = match (args.checkpoint, args.silence_baseline, args.oracle) {
                (Some(path), _, _) => EvalMode::Checkpoint(path),
                (None, true, _) => EvalMode::Silence,
                _ => EvalMode::Oracle,
            };
            let (report, csv) = cmd_evaluate(&args.config, &mode, args.split, args.seed)?;
            println!(
                "MMAE {:.4} = MMAE-True {:.4} + MMAE-Pred {:.4} ({:?} rule) -> {}",
                report.mmae,
                report.mmae_true,
                report.mmae_pred,
                report.mmae_pred_rule,
                csv.display()
            );
        }
        Command::Curves { report, out } => {
            let dest = cmd_curves(&report, out.as_deref())?;
            println!("{}", dest.display());
        }
        Command::Synth { spec, out, seed, splits } => {
            let ids = cmd_synth(&spec, &out, seed, splits)?;
            println!("wrote {} dialogues to {}", ids.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
