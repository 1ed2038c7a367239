fn main() -> std::process::ExitCode {
    mixres::cli::main_from(std::env::args_os())
}
