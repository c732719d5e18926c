//! `cgm`: command-line pipeline for causal analysis of generators.
//!
//! Exit codes: 0 success, 2 usage or validation error, 1 runtime error.

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or values; exit 2.
    Usage(String),
    /// Failure reported by the engine; exit 2 or 1 depending on the cause.
    Core(cgm_core::Error),
    /// A check that ran and failed; exit 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<cgm_core::Error> for CliError {
    fn from(e: cgm_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Runtime(_) => 1,
        }
    }
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    let argv = match config_path(&argv) {
        Some(p) => config::merge(argv, p.as_ref())?,
        None => argv,
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let command_line = argv.iter().skip(1).map(|a| a.to_string_lossy()).collect::<Vec<_>>().join(" ");
    commands::dispatch(&cli, command_line)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
