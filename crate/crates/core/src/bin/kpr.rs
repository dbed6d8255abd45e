use std::process::ExitCode;

use clap::Parser;
use kpr::cli::{error_exit_code, execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("kpr: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
