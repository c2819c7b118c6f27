//! `hesit`: influence tracing and continual-learning experiments.
//!
//! Exit codes: 0 on success, 2 for configuration errors (the message names
//! the offending key), 3 for runtime failures.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::Config;

#[derive(Parser)]
#[command(name = "hesit", version, about = "Hessian-free influence tracing and exemplar replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or re-emit) the task stream as data.csv.
    GenData(Common),
    /// Score one task's training set with the configured method.
    Trace(Common),
    /// Run the curriculum and write the exemplars chosen for each task.
    Select(Common),
    /// Retraining oracle scores, optionally correlated with earlier scores.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Influence CSV to compare against.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// One continual-learning run with the configured strategy.
    RunCl(Common),
    /// Every configured strategy over every repeat.
    Compare(Common),
    /// Wall time of each influence method on the configured pools.
    Timing(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the primary CSV to stdout.
    #[arg(long)]
    stdout: bool,
    /// Worker threads for compare.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.key, self.msg)
    }
}

pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn load_config(common: &Common) -> Result<Config, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
                key: "--config".into(),
                msg: format!("{}: {e}", path.display()),
            })?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.jobs == 0 {
        return Err(ConfigError {
            key: "--jobs".into(),
            msg: "must be >= 1".into(),
        });
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (name, common, against) = match &cli.command {
        Command::GenData(c) => ("gen-data", c, None),
        Command::Trace(c) => ("trace", c, None),
        Command::Select(c) => ("select", c, None),
        Command::Oracle { common, against } => ("oracle", common, against.as_deref()),
        Command::RunCl(c) => ("run-cl", c, None),
        Command::Compare(c) => ("compare", c, None),
        Command::Timing(c) => ("timing", c, None),
    };
    let cfg = load_config(common)?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("creating {}: {e}", common.out.display())))?;
    let started = Instant::now();
    let mut ctx = Context::new(name, cfg, common.out.clone(), common.stdout, common.jobs);
    match &cli.command {
        Command::GenData(_) => commands::gen_data(&mut ctx),
        Command::Trace(_) => commands::trace(&mut ctx),
        Command::Select(_) => commands::select(&mut ctx),
        Command::Oracle { .. } => commands::oracle(&mut ctx, against),
        Command::RunCl(_) => commands::run_cl(&mut ctx),
        Command::Compare(_) => commands::compare(&mut ctx),
        Command::Timing(_) => commands::timing(&mut ctx),
    }?;
    ctx.finish(started).map_err(Failure::Runtime)?;
    eprintln!("{name}: wrote {} (config {})", common.out.display(), ctx.manifest.config_digest);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("hesit: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("hesit: {e:#}");
            ExitCode::from(3)
        }
    }
}
