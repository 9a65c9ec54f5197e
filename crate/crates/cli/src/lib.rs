//! The `mope` command-line pipeline and the HTTP strength meter.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

use mope_core::MopeError;

pub mod args;
pub mod commands;
pub mod config;
pub mod record;
pub mod server;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Why a command stopped: a bad invocation, or input data that could not be
/// used.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<MopeError> for Failure {
    fn from(e: MopeError) -> Self {
        match e {
            MopeError::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Data(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp_millis()
        .try_init();
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot size the thread pool: {e}");
            return EXIT_USAGE;
        }
    }
    match commands::execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let usage: Failure = MopeError::InvalidArgument("tau".into()).into();
        assert_eq!(usage.exit_code(), EXIT_USAGE);
        let data: Failure = MopeError::EmptyResult("x".into()).into();
        assert_eq!(data.exit_code(), EXIT_DATA);
        assert_eq!(data.to_string(), "no usable records in x");
    }
}
