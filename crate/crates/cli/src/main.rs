mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

/// Reference-free enhancement of forward-looking sonar sequences.
#[derive(Parser, Debug)]
#[command(name = "wstfuse", version, about)]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs. 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Decode at twice the frame resolution.
    #[arg(long, global = true)]
    pub sr2x: bool,
    /// Print more progress (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset (manifest, frames, poses.csv).
    Simulate,
    /// Train a model on a dataset directory.
    Train {
        data: PathBuf,
        /// Overrides `steps`; 0 writes the initial model untouched.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Enhance one sequence directory with a trained checkpoint.
    Enhance { checkpoint: PathBuf, sequence: PathBuf },
    /// Score images laid out as `ROOT/<method>/<target>/*.png|pgm`.
    Evaluate { root: PathBuf },
    /// Train one model per input variant and score each on held-out sequences.
    Ablate {
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write the filter bank (and optionally the bridge features of an image).
    BankDump { image: Option<PathBuf> },
    /// Run the built-in gradient, oracle and invariant checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
        return ExitCode::from(4);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
