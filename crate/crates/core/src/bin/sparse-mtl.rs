use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparse_mtl::app::{run, Command, Overrides};

/// Sparse single-task and multi-task feature selection experiments.
#[derive(Debug, Parser)]
#[command(name = "sparse-mtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write the configured training, test and unseen datasets.
    Generate,
    /// Fit the `models.fit_mode` model; write weights and solver trace.
    Fit,
    /// Cross-validated hyperparameter search for both model kinds.
    Grid,
    /// Independent vs joint comparison on the test sets.
    Compare,
    /// Score trained weights on the unseen task.
    Transfer,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(1);
    };
    let command = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Fit => Command::Fit,
        Cmd::Grid => Command::Grid,
        Cmd::Compare => Command::Compare,
        Cmd::Transfer => Command::Transfer,
    };
    let overrides = Overrides {
        output_dir: cli.out,
        seed: cli.seed,
        threads: cli.threads,
    };
    match run(&config, command, &overrides) {
        Ok(out) => {
            eprintln!("wrote results to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
