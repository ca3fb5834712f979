//! `fimlab`: exact FIM, sampled estimates, closed-form variances, bounds,
//! spectra and Monte Carlo sweeps from a network JSON file.
//!
//! Exit status 0 on success, 1 for invalid input, 2 when a non-finite value
//! appears. Errors are printed to stderr as `{"error": {"code", ...}}`.

mod args;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let result = match &cli.command {
        Command::Replay { manifest, out, threads } => commands::replay(manifest, out.as_deref(), *threads),
        cmd => commands::run(cmd, None),
    };
    match result {
        Ok(files) => {
            let names: Vec<&str> = files.iter().map(|f| f.file.as_str()).collect();
            println!("{}", serde_json::json!({ "command": cli.command.name(), "outputs": names }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}
