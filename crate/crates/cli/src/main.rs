//! `bfsa` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bfsa", version, about = "Gaussian-process fitting with the block full-scale approximation")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "BFSA_THREADS")]
    threads: Option<usize>,

    /// JSON run configuration (see `bfsa schema`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

/// Overrides for entries of the configuration.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// Observations, CSV with header x,y,value[,holdout].
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Target locations, CSV with columns x and y.
    #[arg(long, global = true)]
    pub targets: Option<PathBuf>,
    /// Fitted parameters: a fit report or a kernel spec.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic nonstationary dataset.
    Generate {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Fraction of rows flagged as held out.
        #[arg(long, default_value_t = 0.0)]
        holdout_fraction: f64,
    },
    /// Single-anisotropy fits on k-d regions.
    FitLocal,
    /// Global fit, nonstationary from local fits or from the configured kernel.
    FitGlobal {
        /// Local fits (JSON from fit-local) to initialize a nonstationary fit.
        #[arg(long)]
        local: Option<PathBuf>,
    },
    /// Conditional mean and variance at the targets.
    Predict,
    /// Conditional draws at the targets, or unconditional draws at the data locations.
    Simulate {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Eigenvector Z-scores of the data under the fitted covariance.
    Diagnose {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Timing ladder with log-log slopes.
    Bench {
        /// Comma-separated problem sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Print the JSON schema of the run configuration.
    Schema,
}

fn report(kind: &str, message: &str) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // Help and version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("usage", e.to_string().trim()),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return report("usage", "--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return report("usage", &e.to_string());
        }
    }
    match commands::run(cli.config.as_deref(), &cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.kind(), &e.to_string()),
    }
}
