fn main() {
    std::process::exit(intervene::cli::main_with_args(std::env::args_os()));
}
