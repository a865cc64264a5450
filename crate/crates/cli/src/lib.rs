//! Command-line orchestration of the stopdetect pipeline.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{render_config, validate_config, RunConfig};
pub use error::{CliError, CliResult};
pub use stages::{run_pipeline, run_stage, StageName};

#[derive(Debug, Parser)]
#[command(name = "stopdetect", version, about = "Stop detection on gapped GPS trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run configuration (flat `section.key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate devices and write pings.csv with the planted stops.
    Generate(Common),
    /// Quality-filter devices and label stops with the density detector.
    Label(Common),
    /// Mask a stratified sample of stops down to two retained pings.
    InjectGaps(Common),
    /// Compute the per-ping feature table and cell entropy.
    Features(Common),
    /// Temporal train/validation/test split.
    Split(Common),
    /// Fit the scaler and train both classifiers.
    Train(Common),
    /// Score the test split and write the report and tables.
    Evaluate(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Validate a config and print it with defaults filled in.
    CheckConfig(Common),
}

/// Load, validate and apply command-line overrides.
pub fn load_config(common: &Common) -> CliResult<RunConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|_| {
            CliError::Config(vec![config::ConfigIssue { key: "--config".into(), message: format!("cannot read {}", p.display()) }])
        })?,
        None => String::new(),
    };
    let mut cfg = validate_config(&text).map_err(CliError::Config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let (stage, common) = match cli.command {
        Command::Generate(c) => (Some(StageName::Generate), c),
        Command::Label(c) => (Some(StageName::Label), c),
        Command::InjectGaps(c) => (Some(StageName::InjectGaps), c),
        Command::Features(c) => (Some(StageName::Features), c),
        Command::Split(c) => (Some(StageName::Split), c),
        Command::Train(c) => (Some(StageName::Train), c),
        Command::Evaluate(c) => (Some(StageName::Evaluate), c),
        Command::Pipeline(c) => {
            let cfg = load_config(&c)?;
            return run_pipeline(&cfg, &cfg.paths.out);
        }
        Command::CheckConfig(c) => (None, c),
    };
    let cfg = load_config(&common)?;
    match stage {
        Some(s) => run_stage(s, &cfg, &cfg.paths.out),
        None => {
            print!("{}", render_config(&cfg));
            Ok(())
        }
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
