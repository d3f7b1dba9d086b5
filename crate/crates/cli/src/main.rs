use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(polysource_cli::run(std::env::args_os()))
}
