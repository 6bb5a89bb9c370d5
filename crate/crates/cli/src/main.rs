//! `shapeflow`: batch driver for the design pipeline.
//!
//! Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime. Errors are printed to
//! stderr as a single JSON object.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use shapeflow_core::grammar::{GrammarViolation, ValidationIssue};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "shapeflow", version, about = "Shape-grammar design pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GrammarArg {
    /// Grammar source file; the drone fixture when omitted.
    #[arg(long)]
    grammar: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a grammar file.
    GrammarCheck {
        file: PathBuf,
    },
    /// Seeded random walks, one design per line.
    Walk {
        #[command(flatten)]
        grammar: GrammarArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Embed designs (JSON lines) into a dataset file.
    Embed {
        input: PathBuf,
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train the conditional GAN on a dataset file.
    TrainGan {
        dataset: PathBuf,
        #[command(flatten)]
        grammar: GrammarArg,
        /// Checkpoint to write.
        #[arg(long)]
        model: PathBuf,
        /// GanConfig as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample the GAN and snap every sample to the grammar.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        grammar: GrammarArg,
        /// Shape type to condition on; balanced over all types when omitted.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Score designs with the causal-map network and filter them.
    Select {
        /// Designs or `sample` output, one per line.
        input: PathBuf,
        #[command(flatten)]
        grammar: GrammarArg,
        #[arg(long, default_value_t = 0.5, conflicts_with = "top_k")]
        tau: f64,
        #[arg(long)]
        top_k: Option<usize>,
        /// Causal map JSON; the drone map when omitted.
        #[arg(long)]
        causal_map: Option<PathBuf>,
    },
    /// Train the completion model on designs (JSON lines).
    TrainCompleter {
        input: PathBuf,
        #[command(flatten)]
        grammar: GrammarArg,
        #[arg(long)]
        model: PathBuf,
        /// CompleterConfig as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Complete a partial design.
    Complete {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        grammar: GrammarArg,
        /// Preset (`body`, `body+4arms`, `body+2arms`) or a JSON design file.
        #[arg(long)]
        prefix: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Most rules to add.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Contribution shares of a task's finalized solutions.
    Contributions {
        task_id: String,
        #[arg(long)]
        branch: Option<String>,
        #[arg(long, env = "DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        #[arg(long)]
        gan_model: Option<PathBuf>,
        #[arg(long)]
        completer_model: Option<PathBuf>,
        /// Allowed CORS origin, repeatable; `*` allows any.
        #[arg(long, value_delimiter = ',')]
        cors: Vec<String>,
        #[arg(long, default_value_t = 8 << 20)]
        max_body_bytes: usize,
    },
    /// Run the whole chain on the drone fixture and print a summary.
    Demo {
        #[arg(long, default_value_t = 7, conflicts_with = "manifest")]
        seed: u64,
        /// DemoManifest JSON, instead of the defaults for `--seed`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory for datasets, checkpoints and summary.json.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Validation {
        message: String,
        issues: Vec<ValidationIssue>,
        violation: Option<GrammarViolation>,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError::Validation {
            message: message.into(),
            issues: Vec::new(),
            violation: None,
        }
    }

    pub fn runtime(message: impl std::fmt::Display) -> Self {
        CliError::Runtime(message.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "<[ValidationIssue]>::is_empty")]
    issues: &'a [ValidationIssue],
    #[serde(skip_serializing_if = "Option::is_none")]
    violation: Option<&'a GrammarViolation>,
}

fn report(kind: &str, message: String, issues: &[ValidationIssue], violation: Option<&GrammarViolation>) {
    let body = ErrorBody {
        kind,
        message,
        issues,
        violation,
    };
    eprintln!(
        "{}",
        serde_json::json!({ "error": serde_json::to_value(body).expect("error serializes") })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.render().to_string().trim().to_string(), &[], None);
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Runtime(_)) => {
            report("runtime", e.to_string(), &[], None);
            ExitCode::from(3)
        }
        Err(CliError::Validation {
            message,
            issues,
            violation,
        }) => {
            report("validation", message, &issues, violation.as_ref());
            ExitCode::from(2)
        }
    }
}
