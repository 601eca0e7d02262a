use std::process::ExitCode;

fn main() -> ExitCode {
    scf_cli::run(std::env::args_os())
}
