fn main() {
    std::process::exit(orchestra_cli::main_with_args(std::env::args_os()));
}
