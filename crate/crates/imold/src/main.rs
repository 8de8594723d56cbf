use std::process::ExitCode;

use clap::Parser;
use imold::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors; exit code 2 is reserved
            // for numeric failures
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match execute(cli.command, &mut std::io::stdout()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
