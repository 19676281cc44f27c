//! `ivdml`: fit, fit-het, simulate and check-kernel.
//!
//! Errors are reported as `{"error": {"kind": ..., "message": ...}}` on
//! stderr with a nonzero exit status.

mod args;
mod config;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ivdml_core::Error;

use args::{Cli, Command};

fn report(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            report("invalid_parameter", "--threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report("threads", &e.to_string());
            return ExitCode::FAILURE;
        }
    }

    let result: Result<(), Error> = match &cli.command {
        Command::Fit(a) => run::fit(a),
        Command::FitHet(a) => run::fit_het(a),
        Command::Simulate(a) => run::simulate(a),
        Command::CheckKernel(a) => run::check_kernel_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
