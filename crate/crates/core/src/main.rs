use std::process::ExitCode;

fn main() -> ExitCode {
    boxembed::cli::main_with_args(std::env::args_os())
}
