use std::process::ExitCode;

fn main() -> ExitCode {
    odefilt_cli::run_cli(std::env::args_os())
}
