//! The `engine` command line: batch subcommands over the retrieval
//! toolkit plus a small HTTP retrieval service.
//!
//! Exit status is 0 on success, 1 when a pipeline stage fails and 2 for
//! usage or configuration errors (in which case nothing is written).

mod commands;
pub mod config;
pub mod manifest;
mod retriever;
pub mod serve;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use commands::{load_knowledge_base, load_samples};
pub use config::{Config, Loaded, Role};
pub use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Parser)]
#[command(name = "engine", version, about = "Multi-source retrieval pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk text corpora, load the term graph, hash and dedup reports
    Ingest(Common),
    /// Embed chunk stores and report images into dense indices
    Index(Common),
    /// Generate queries per sample, retrieve context, render answer prompts
    Retrieve(Common),
    /// Expert query exploration with judge labelling
    Explore(Common),
    /// Turn labelled exploration records into SFT and DPO files
    #[command(name = "build-mqg-data")]
    BuildMqgData(Common),
    /// Run the answerer under five contexts and emit preference pairs
    BuildPairs(Common),
    /// Compute metric reports
    Eval(Common),
    /// Serve POST /retrieve and GET /healthz
    Serve(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Ingest(c) => ("ingest", c),
            Command::Index(c) => ("index", c),
            Command::Retrieve(c) => ("retrieve", c),
            Command::Explore(c) => ("explore", c),
            Command::BuildMqgData(c) => ("build-mqg-data", c),
            Command::BuildPairs(c) => ("build-pairs", c),
            Command::Eval(c) => ("eval", c),
            Command::Serve(c) => ("serve", c),
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (name, common) = cli.command.split();
    let result = Loaded::from_file(&common.config, &common.set).and_then(|loaded| {
        let r = dispatch(name, &loaded);
        if let Err(e @ CliError::Pipeline(_)) = &r {
            write_error_report(&loaded, name, e);
        }
        r
    });
    match result {
        Ok(summary) => {
            eprintln!("engine {name}: {summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", json!({ "subcommand": name, "kind": e.kind(), "error": e.to_string() }));
            e.exit_code()
        }
    }
}

fn dispatch(name: &str, loaded: &Loaded) -> Result<String, CliError> {
    match name {
        "ingest" => commands::ingest(loaded),
        "index" => commands::index(loaded),
        "retrieve" => commands::retrieve(loaded),
        "explore" => commands::explore(loaded),
        "build-mqg-data" => commands::build_mqg_data(loaded),
        "build-pairs" => commands::build_pairs(loaded),
        "eval" => commands::eval(loaded),
        "serve" => serve::run(loaded).map(|_| "stopped".to_string()),
        _ => unreachable!("clap only yields known subcommands"),
    }
}

/// Best effort: the stderr line is the primary report.
fn write_error_report(loaded: &Loaded, name: &str, e: &CliError) {
    let dir = loaded.out_dir();
    if std::fs::create_dir_all(&dir).is_ok() {
        let body = json!({ "subcommand": name, "kind": e.kind(), "error": e.to_string() });
        let _ = std::fs::write(dir.join(format!("error-{name}.json")), format!("{body}\n"));
    }
}
