use std::process::ExitCode;

use clap::Parser;
use eitm_cli::args::Cli;
use eitm_cli::commands::run;
use eitm_cli::{EXIT_OK, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(out) => {
            println!("outputs: {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("eitm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
