//! `curate`: runs the curation pipeline stage by stage or end to end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input/output error,
//! 4 completion provider failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod pipeline;

use config::CliConfig;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Provider(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Provider(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Provider(m) => m,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "curate", version, about = "Multilingual instruction-dataset curation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file for the stage.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub output: PathBuf,
    /// Worker threads for filtering and dedup; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a corpus and run the cleaning funnel.
    Clean,
    /// Cap every language at `sample_cap` prompts.
    Sample,
    /// Remove near-duplicate prompts within each language.
    Dedup,
    /// Generate responses and drop incomplete ones.
    Synth,
    /// Merge the curated dataset with the configured sources.
    Blend,
    /// Extract one language from a dataset.
    Subset {
        #[arg(long)]
        language: Option<String>,
    },
    /// Write the language distribution of a dataset.
    Report,
    /// Every stage from raw corpus to report.
    Run,
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = CliConfig::load(cli.global.config.as_deref(), cli.global.seed)?;
    let ctx = pipeline::Context::new(cfg, &cli.global)?;
    match cli.command {
        Command::Clean => ctx.clean(&ctx.input_or("clean")?).map(drop),
        Command::Sample => ctx.sample(&ctx.input_or("sample")?).map(drop),
        Command::Dedup => ctx.dedup(&ctx.input_or("dedup")?).map(drop),
        Command::Synth => ctx.synth(&ctx.input_or("synth")?).map(drop),
        Command::Blend => ctx.blend(&ctx.input_or("blend")?).map(drop),
        Command::Subset { language } => ctx.subset(&ctx.input_or("subset")?, language.as_deref()).map(drop),
        Command::Report => ctx.report(&ctx.input_or("report")?),
        Command::Run => ctx.run(&ctx.input_or("run")?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("curate: error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
