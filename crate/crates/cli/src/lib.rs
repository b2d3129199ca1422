//! `ctrltab`: corpus construction, training, retrieval, generation,
//! evaluation and the annotation service behind one binary.
//!
//! Exit codes: 0 success, 1 invalid usage or input, 2 runtime failure.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ConfigFile;
pub use output::{manifest_path, sha256_file, write_atomic};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<ctrltab_core::Error> for CliError {
    fn from(e: ctrltab_core::Error) -> Self {
        use ctrltab_core::Error as E;
        match e {
            E::Io { .. } | E::Tensor { .. } | E::Transport { .. } | E::EmptyOutput => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctrltab", version, about = "Controlled table-to-text generation workbench")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Random seed; required by train and generate subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON or key=value file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build pairs JSONL from article XML and a tables JSONL.
    BuildCorpus(commands::BuildCorpusArgs),
    /// Corpus statistics, optionally checked against the reference corpus.
    Stats(commands::StatsArgs),
    /// Write a synthetic pairs JSONL.
    Synth(commands::SynthArgs),
    /// Train the denoising retriever.
    TrainRetriever(commands::TrainRetrieverArgs),
    /// Train the description generator.
    TrainGenerator(commands::TrainGeneratorArgs),
    /// Top-n knowledge sentences per pair.
    Retrieve(commands::RetrieveArgs),
    /// Generate descriptions with a trained generator or an external model.
    Generate(commands::GenerateArgs),
    /// Score generations against reference descriptions.
    Evaluate(commands::EvaluateArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(commands::GradcheckArgs),
    /// Inter-annotator agreement.
    Agreement(commands::AgreementArgs),
    /// Run the annotation service.
    Serve(commands::ServeArgs),
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = match cli.global.seed {
        Some(s) => Some(s),
        None => cfg.get("seed")?,
    };
    let threads = match cli.global.threads {
        Some(t) => Some(t),
        None => cfg.get("threads")?,
    };
    let ctx = commands::Context { seed, cfg };
    let job = || commands::dispatch(cli.command, &ctx);
    let result = match threads {
        Some(0) => return Err(CliError::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(job),
        None => job(),
    };
    let unused = ctx.cfg.unused();
    if !unused.is_empty() {
        log::warn!("config keys not used by this subcommand: {}", unused.join(", "));
    }
    result
}
