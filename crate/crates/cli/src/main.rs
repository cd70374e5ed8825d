//! `synthgen`: every pipeline stage as a subcommand over one run config.
//!
//! Stages read their predecessors' artifacts from the output directory and
//! refuse inputs whose digests do not match, so a run can stop and resume
//! at any stage boundary. Exit codes: 0 success, 1 validation failure,
//! 2 backend or transport failure.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synthgen_core::PipelineError;

/// Synthetic-data pipeline driver: catalogs, caption banks, generation
/// plans, fine-tune jobs, and training manifests.
#[derive(Parser)]
#[command(name = "synthgen", version)]
pub struct Cli {
    /// Run config JSON; relative paths inside resolve against its directory.
    #[arg(long, global = true, value_name = "PATH", default_value = "run_config.json")]
    pub config: PathBuf,
    /// Override the config's global seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Context sampling scope: none, class, or dataset.
    #[arg(long, global = true, value_name = "MODE")]
    pub mode: Option<String>,
    /// Real-loss weight in [0, 1] recorded in the training manifest.
    #[arg(long, global = true, value_name = "REAL")]
    pub lambda: Option<f64>,
    /// Per-class budget: synthetic count for `plan`, class total for
    /// long-tail `assemble`.
    #[arg(long, global = true, value_name = "INT")]
    pub budget: Option<u32>,
    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Describe the work without calling any backend.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Pipeline stages in dependency order, plus the causal-model demo.
#[derive(Subcommand)]
pub enum Command {
    /// Validate the source manifest into the output catalog.
    Ingest,
    /// Draw the few-shot or long-tail training split and a validation split.
    Split,
    /// Caption every training image into the context-attribute bank.
    Extract,
    /// Emit the fine-tune job pairing each training image with its caption.
    FinetuneManifest,
    /// Sample context pairs from the bank into a generation plan.
    Plan,
    /// Render every plan item through the image backend.
    Generate,
    /// Combine real and synthetic images into a training manifest.
    Assemble,
    /// Score synthetic against real per-class feature distributions.
    Fid,
    /// Run a built-in causal toy model and report context-policy gaps.
    ScmDemo {
        /// Built-in model name: toy-confounded or toy-noisy.
        #[arg(long, default_value = "toy-confounded")]
        model: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are not failures; anything else is a usage
            // error, which counts as validation.
            let failed = err.use_stderr();
            let _ = err.print();
            return if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match stages::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                PipelineError::Backend(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
