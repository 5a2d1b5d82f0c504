fn main() {
    std::process::exit(mindriven::cli::main_with_args(std::env::args_os()));
}
