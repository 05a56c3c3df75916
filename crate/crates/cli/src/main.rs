use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    planmae_cli::run(planmae_cli::Cli::parse())
}
