use std::process::ExitCode;

use bedweigh_cli::{exit_code, run, Cli, RunConfig};
use clap::{CommandFactory, FromArgMatches};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let defaults = format!("Config defaults (TOML):\n\n{}", RunConfig::default().to_toml());
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
