fn main() {
    std::process::exit(trace_kit::cli::main_with_args(std::env::args_os()));
}
