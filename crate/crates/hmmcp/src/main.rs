use std::process::ExitCode;

use hmmcp::cli::{run, EXIT_INTERNAL};

fn main() -> ExitCode {
    match std::panic::catch_unwind(|| run(std::env::args_os())) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{}", e.message);
            ExitCode::from(e.code)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
