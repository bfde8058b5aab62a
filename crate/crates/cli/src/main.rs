use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(affine_hilbert_cli::main_with(std::env::args_os()))
}
