use std::process::ExitCode;

fn main() -> ExitCode {
    msrelax::cli::main()
}
