//! Command-line front end and HTTP inference service for planmae.

use std::process::ExitCode;

pub mod args;
pub mod commands;
pub mod config;
pub mod service;

pub use args::{Cli, Command};
pub use config::{ConfigError, Profile, Resolved, RunConfig};

/// Resolves the configuration and runs the subcommand. Configuration
/// problems exit with 2, like usage errors; failures while running exit
/// with 1.
pub fn run(cli: Cli) -> ExitCode {
    let file = match cli.config.as_deref().map(RunConfig::load).transpose() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cfg = match RunConfig::resolve(file.as_ref(), &cli.overlay()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    eprintln!("effective config:\n{}", cfg.dump());
    let result = match &cli.command {
        Command::GenerateData(a) => commands::generate_data(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a, &cfg),
        Command::Serve(_) => commands::serve(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
