fn main() {
    std::process::exit(se3diff::cli::main_with_args(std::env::args_os()));
}
