use std::process::ExitCode;

fn main() -> ExitCode {
    graphau_pain::cli::main_with_args(std::env::args_os())
}
