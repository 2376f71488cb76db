use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ocvcap::cli::run(std::env::args_os()) as u8)
}
