//! Command-line driver for the business-model pipeline.

pub mod config;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

/// Written to the output directory when a run stops part way.
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("{stage}: {message}")]
    Compute { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Compute { .. } => EXIT_COMPUTE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bankbm", version, about = "Identify bank business models from balance-sheet panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Panel CSV.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// L, M, S or all.
    #[arg(long, global = true)]
    pub size_group: Option<String>,
    /// Inclusive k scan, e.g. 2-8.
    #[arg(long, global = true)]
    pub k_range: Option<String>,
    /// Fit with the configured forest parameters instead of tuning.
    #[arg(long, global = true)]
    pub skip_tuning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check configuration and input; write the rejection log.
    Validate,
    /// Write a synthetic panel with planted business models.
    Simulate,
    /// Tune and fit one forest per size group.
    Fit,
    /// Decompose predictions into per-component contributions.
    Decompose,
    /// Cluster contributions and choose k by majority vote.
    Cluster,
    /// Profile, rank and characterize business models.
    Characterize,
    /// Render the report bundle.
    Report,
    /// Run every stage in order.
    Pipeline,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            input: self.input.clone(),
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            threads: self.threads,
            size_group: self.size_group.clone(),
            k_range: self.k_range.clone(),
            skip_tuning: self.skip_tuning,
        }
    }
}

pub fn load_config(flags: &Flags) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&flags.overrides());
    Ok(cfg)
}

/// Every stage in order, then the run manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ing = stages::validate(cfg)?;
    let _ = std::fs::remove_file(cfg.out_dir.join(FAILED_MARKER));
    let result = (|| {
        stages::fit(cfg, &ing)?;
        stages::decompose(cfg, &ing)?;
        stages::cluster(cfg, &ing)?;
        stages::characterize(cfg, &ing)?;
        stages::report(cfg)?;
        manifest::write_manifest(cfg, &ing.data.provenance).map(|_| ())
    })();
    if let Err(e) = &result {
        let _ = std::fs::write(cfg.out_dir.join(FAILED_MARKER), format!("{e}\n"));
    }
    result
}

pub fn execute(command: Command, cfg: &PipelineConfig) -> Result<(), CliError> {
    let needs_input = !matches!(command, Command::Simulate | Command::Report);
    if needs_input {
        cfg.validate()?;
    }
    match command {
        Command::Validate => stages::validate(cfg).map(|_| ()),
        Command::Simulate => stages::simulate(cfg).map(|_| ()),
        Command::Fit => {
            let ing = stages::validate(cfg)?;
            stages::fit(cfg, &ing).map(|_| ())
        }
        Command::Decompose => stages::decompose(cfg, &stages::ingest(cfg)?),
        Command::Cluster => stages::cluster(cfg, &stages::ingest(cfg)?),
        Command::Characterize => stages::characterize(cfg, &stages::ingest(cfg)?).map(|_| ()),
        Command::Report => stages::report(cfg).map(|_| ()),
        Command::Pipeline => run_pipeline(cfg),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = load_config(&cli.flags).and_then(|cfg| {
        if cfg.threads == Some(0) {
            return Err(CliError::Validation("threads must be positive".into()));
        }
        match cfg.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
                pool.install(|| execute(cli.command, &cfg))
            }
            None => execute(cli.command, &cfg),
        }
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
