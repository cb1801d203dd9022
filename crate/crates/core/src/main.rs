fn main() {
    std::process::exit(ctxmon::cli::main_with_args(std::env::args_os()));
}
