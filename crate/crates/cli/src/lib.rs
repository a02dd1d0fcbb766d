//! Pipeline stages behind the `iopscope` command.

pub mod commands;
pub mod config;
pub mod demo;
pub mod error;

pub use config::{Cli, Command, Opts, RunConfig};
pub use error::{CliError, ErrorClass};

/// Runs one subcommand and returns what it prints on success.
pub fn run(command: Command, cfg: &RunConfig) -> Result<String, CliError> {
    Ok(match command {
        Command::Ingest => commands::cmd_ingest(cfg)?.to_string(),
        Command::Analyze => commands::cmd_analyze(cfg)?.to_string(),
        Command::Annotate => format!("{}\n", commands::cmd_annotate(cfg)?),
        Command::Score => {
            commands::cmd_score(cfg)?;
            commands::cmd_report(cfg)?
        }
        Command::Report => commands::cmd_report(cfg)?,
        Command::Serve => {
            commands::cmd_serve(cfg)?;
            String::new()
        }
        Command::Demo => demo::cmd_demo(cfg)?.to_string(),
    })
}
