fn main() {
    std::process::exit(fedae::cli::main_with_args(std::env::args_os()));
}
