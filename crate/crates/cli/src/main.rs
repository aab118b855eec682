use std::process::ExitCode;

use clap::Parser;
use opsys_cli::{emit, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("opsys: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let bytes = emit(&report, cli.format);
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &bytes) {
                eprintln!("opsys: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{bytes}"),
    }
    ExitCode::SUCCESS
}
