use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipa_cli::{
    cmd_collapse, cmd_evaluate, cmd_generate, cmd_sweep, cmd_train, init_thread_pool, GenerateArgs,
};

/// Experiment CLI for composable feature-interaction CTR models.
///
/// Set IPA_THREADS to cap the worker pool. Exit codes: 0 ok, 2 usage or
/// config error, 3 data or I/O error.
#[derive(Parser)]
#[command(name = "ipa", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cross-term regression dataset CSV.
    Generate {
        /// Maximum cross-term order O (1 <= O <= features).
        #[arg(long)]
        order: usize,
        /// Feature count n (<= 16).
        #[arg(long)]
        features: usize,
        /// Number of rows.
        #[arg(long)]
        samples: usize,
        /// Label noise standard deviation.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a key=value config file.
    ///
    /// Writes history.jsonl, model.ckpt, resolved.cfg and split.txt into the
    /// config's output directory. Each history.jsonl line is a single JSON
    /// object with exactly these keys: epoch, train_loss, val_loss, val_auc,
    /// val_rmse, alpha, w_frob, alpha_w.
    Train {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset file.
    Evaluate {
        /// Model checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset path (schema must match the checkpoint).
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one variant per value of a swept config key.
    Sweep {
        /// Path to the base experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Sweep spec: `L=3..8`, `K=4,8,16` or `model=PFL,PF'D,WGT`.
        #[arg(long)]
        vary: String,
    },
    /// Write the embedding-collapse report CSV for a checkpoint.
    Collapse {
        /// Model checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset path (schema must match the checkpoint).
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), ipa_cli::CliError> {
    match cli.command {
        Command::Generate { order, features, samples, noise, seed, out } => {
            cmd_generate(&GenerateArgs { order, features, samples, noise, seed, out: out.clone() })?;
            println!("wrote {}", out.display());
        }
        Command::Train { config } => {
            let outcome = cmd_train(&config)?;
            println!(
                "run dir: {} (params: {}, best epoch: {})",
                outcome.run_dir.display(),
                outcome.param_count,
                outcome.history.best_epoch
            );
            println!("val: {}", serde_json::to_string(&outcome.val).unwrap());
            println!("test: {}", serde_json::to_string(&outcome.test).unwrap());
        }
        Command::Evaluate { checkpoint, data } => {
            let report = cmd_evaluate(&checkpoint, &data)?;
            println!("{}", serde_json::to_string(&report).unwrap());
        }
        Command::Sweep { config, vary } => {
            let path = cmd_sweep(&config, &vary)?;
            println!("wrote {}", path.display());
        }
        Command::Collapse { checkpoint, data, out } => {
            cmd_collapse(&checkpoint, &data, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
