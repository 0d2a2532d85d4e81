use std::process::ExitCode;

use clap::Parser;
use driftscope::cli::{error_line, run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
