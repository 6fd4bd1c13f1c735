//! `protext` command-line driver: curation, training, evaluation, ablation
//! sweeps, prompt inspection and the synthetic benchmark, each writing a run
//! manifest next to its artifacts.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::{LoadedConfig, RunConfig};
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_VALIDATION};
use crate::manifest::Recorder;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("PROTEXT_GIT_DESCRIBE"), ")");

pub const DEFAULT_OUT: &str = "out";

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    match run(cli) {
        Ok(manifest) => {
            log::info!("manifest {}", manifest.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(level: &str) -> CliResult<()> {
    let filter = log::LevelFilter::from_str(level)
        .map_err(|_| CliError::validation(format!("unknown log level {level:?}")))?;
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
    Ok(())
}

/// Runs one command and returns the path of the manifest it wrote.
pub fn run(cli: Cli) -> CliResult<PathBuf> {
    let name = cli.command.name();
    let LoadedConfig { config: mut cfg, command } = match &cli.config {
        Some(p) => config::load(p)?,
        None => LoadedConfig { config: RunConfig::default(), command: None },
    };
    if let Some(c) = command {
        if c != name {
            return Err(CliError::validation(format!("the manifest was written by `{c}`, not `{name}`")));
        }
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.log_level.is_some() {
        cfg.log_level = cli.log_level.clone();
    }
    init_logging(cfg.log_level.as_deref().unwrap_or("info"))?;

    let seed = cfg.seed.unwrap_or(0);
    cfg.seed = Some(seed);
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.out = Some(out.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let mut rec = Recorder::default();
    match &cli.command {
        Command::Curate(a) => commands::curate(&mut cfg, a, &out, &mut rec)?,
        Command::Train(a) => commands::train_cmd(&mut cfg, a, seed, &out, &mut rec)?,
        Command::Eval(a) => commands::eval(&mut cfg, a, &out, &mut rec)?,
        Command::Ablate(a) => commands::ablate(&mut cfg, a, seed, &out, &mut rec)?,
        Command::Inspect(a) => commands::inspect(&mut cfg, a, &out, &mut rec)?,
        Command::Synthetic(a) => commands::synthetic(&mut cfg, a, seed, &out, &mut rec)?,
    }
    rec.finish(&out, name, seed, &cfg)
}
