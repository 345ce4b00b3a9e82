use std::process::ExitCode;

use clap::Parser;

use bnnood::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bnnood: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
