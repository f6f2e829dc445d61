use std::process::ExitCode;

use clap::Parser;
use msfuse::cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match msfuse::execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    print!("{}", report.to_text());
    if let Some(path) = &cli.common.report {
        if let Err(e) = std::fs::write(path, report.to_json()) {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(msfuse::exit_code(&report) as u8)
}
