use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use lpcnet_cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let res = run(&cli.command, &mut stdout).context("lpcnet");
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            eprintln!("error: {:#}", e);
            ExitCode::from(code)
        }
    }
}
