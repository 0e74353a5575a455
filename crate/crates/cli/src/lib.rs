//! The `ctxrank` command line: context extraction, training, ranking,
//! evaluation and latency benchmarking.
//!
//! Every artifact carries the hash of the run configuration, the hash of
//! the dataset files and the seed.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ctxrank_core::{Error, Result};

use commands::Inputs;
use config::{Overrides, RunConfig};

pub const THREADS_ENV: &str = "CTXRANK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ctxrank", version, about = "Contextual answer sentence ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select local and global context for every instance; writes contexts.jsonl
    Extract(Flags),
    /// Train a model; writes model.ckpt and train_log.json
    Train(Flags),
    /// Rank candidates per question; writes rankings.jsonl
    Rank(Flags),
    /// Compute P@1, MAP and MRR; writes report.json (or comparison.json with --compare)
    Eval(Flags),
    /// Measure per-sample forward latency; updates report.json
    Bench(Flags),
    /// Print the mean number of selected global sentences
    Stats(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON run configuration; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Questions used for per-epoch dev P@1 during training
    #[arg(long)]
    dev_qa: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Precomputed contexts.jsonl aligned line by line with --qa
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Baseline report.json for relative improvement
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Reports to tabulate side by side
    #[arg(long, num_args = 1..)]
    compare: Vec<PathBuf>,
    /// no_context | local | global | concat | ensemble | mwa
    #[arg(long)]
    variant: Option<String>,
    /// ngram | cosine
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    unfreeze_top_k: Option<usize>,
    /// Benchmark repeats
    #[arg(long)]
    repeats: Option<usize>,
}

impl Flags {
    fn resolve(self) -> Result<(RunConfig, Inputs)> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                    field: "config",
                    message: format!("cannot read {}: {e}", path.display()),
                })?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            docs: self.docs,
            qa: self.qa,
            dev_qa: self.dev_qa,
            out: self.out,
            variant: self.variant,
            scorer: self.scorer,
            k: self.k,
            h: self.h,
            budget: self.budget,
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            unfreeze_top_k: self.unfreeze_top_k,
            repeats: self.repeats,
        })?;
        cfg.validate()?;
        let inputs = Inputs {
            contexts: self.contexts,
            model: self.model,
            baseline: self.baseline,
            compare: self.compare,
        };
        Ok((cfg, inputs))
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config {
            field: "CTXRANK_THREADS",
            message: format!("expected a positive integer, got `{value}`"),
        })?;
    // The global pool can only be built once per process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::Dataset { .. }
        | Error::DuplicateDocument(_)
        | Error::SentenceOutOfBounds { .. }
        | Error::UnknownDocument(_) => "dataset",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Checkpoint(_) => "checkpoint",
        Error::SingleClass | Error::Diverged { .. } => "training",
        _ => "invalid_input",
    }
}

/// One-line JSON description of `e`, as printed on stderr.
pub fn error_line(e: &Error) -> String {
    let field = match e {
        Error::Config { field, .. } => Some(*field),
        _ => None,
    };
    let message = match e {
        Error::Config { message, .. } => message.clone(),
        other => other.to_string(),
    };
    serde_json::json!({ "error": error_kind(e), "field": field, "message": message }).to_string()
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Extract(f) => commands::run_extract(&f.resolve()?.0),
        Command::Train(f) => {
            let (cfg, inputs) = f.resolve()?;
            commands::run_train(&cfg, &inputs)
        }
        Command::Rank(f) => {
            let (cfg, inputs) = f.resolve()?;
            commands::run_rank(&cfg, &inputs)
        }
        Command::Eval(f) => {
            let (cfg, inputs) = f.resolve()?;
            commands::run_eval(&cfg, &inputs)
        }
        Command::Bench(f) => {
            let (cfg, inputs) = f.resolve()?;
            commands::run_bench(&cfg, &inputs)
        }
        Command::Stats(f) => {
            let (cfg, inputs) = f.resolve()?;
            commands::run_stats(&cfg, &inputs, std::io::stdout().lock())
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 on a run error (one JSON line on
/// stderr), 2 on a usage error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
