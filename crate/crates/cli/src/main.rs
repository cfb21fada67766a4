//! `multisens` command-line interface.
//!
//! Exit codes: 0 success (unbounded regions included), 2 invalid input,
//! 3 numerical non-convergence. Failures print a JSON object on stderr.

mod args;
mod commands;
mod inputs;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::Cli;

/// A failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(multisens::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<multisens::Error> for CliError {
    fn from(e: multisens::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Lib(e) => (e.kind(), e.to_string()),
        };
        let mut error = json!({ "kind": kind, "message": message, "exit_code": self.exit_code() });
        if let CliError::Lib(multisens::Error::NonConvergence { iterations, last, .. }) = self {
            error["iterations"] = json!(iterations);
            error["last"] = json!(last);
        }
        json!({ "error": error })
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code())
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MULTISENS_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::Usage(format!("MULTISENS_THREADS={v:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim().to_owned())),
    };
    match configure_threads(cli.threads).and_then(|()| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
