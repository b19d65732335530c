//! Command-line plumbing: configuration resolution and one function per subcommand.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] physdrive::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },
    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.1e}")]
    Gradcheck { max_rel_error: f64, tolerance: f64 },
}

impl CliError {
    /// 1 validation, 2 compatibility or protocol, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_compatibility() => 2,
            CliError::Core(e) if matches!(e.root(), physdrive::Error::Protocol(_)) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Gradcheck { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "physdrive", version, about = "Physics-conditioned waypoint policies: data, training and evaluation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "PHYSDRIVE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=3e-4`. Repeatable; wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set out_dir=...`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for episode and gradient parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Checkpoint to use; defaults to `<checkpoints>/<train.variant>.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert datasets, one file per vehicle, plus a manifest.
    GenData,
    /// Train `train.variant` on the recorded datasets.
    Train {
        /// Checkpoint stem; defaults to the variant name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Few-shot fine-tune a checkpoint on one vehicle into a new checkpoint.
    Finetune(CheckpointArg),
    /// Closed-loop benchmark over catalogue vehicles and routes.
    Eval(CheckpointArg),
    /// Closed-loop benchmark over freshly sampled unseen vehicles.
    ZeroShot(CheckpointArg),
    /// Compare analytic and finite-difference gradients on fresh parameters.
    Gradcheck {
        /// Check one variant instead of all four.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Render a comparison table and chart from evaluation reports.
    Report {
        /// Report JSON files; defaults to every `eval_*.json` in the reports directory.
        inputs: Vec<PathBuf>,
    },
}

/// Parses arguments with the config-key listing appended to `--help`.
pub fn parse_args<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cmd = Cli::command().after_long_help(config::keys_help());
    let matches = cmd.try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Reads the config file (if any) and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::MissingInput {
            path: p.clone(),
            reason: e.to_string(),
        })?),
        None => None,
    };
    let mut overrides = cli.overrides.clone();
    if let Some(dir) = &cli.out_dir {
        let dir = toml::Value::String(dir.to_string_lossy().into_owned());
        overrides.push(format!("out_dir={dir}"));
    }
    RunConfig::resolve(text.as_deref(), &overrides)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg).map(|_| ()),
        Command::Train { name } => commands::train(&cfg, name.as_deref()).map(|_| ()),
        Command::Finetune(a) => commands::finetune(&cfg, a.checkpoint.as_deref()).map(|_| ()),
        Command::Eval(a) => commands::eval(&cfg, a.checkpoint.as_deref()).map(|_| ()),
        Command::ZeroShot(a) => commands::zero_shot(&cfg, a.checkpoint.as_deref()).map(|_| ()),
        Command::Gradcheck { variant } => commands::gradcheck(&cfg, variant.as_deref()).map(|_| ()),
        Command::Report { inputs } => commands::report(&cfg, inputs).map(|_| ()),
    }
}
