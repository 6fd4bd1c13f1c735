fn main() {
    std::process::exit(protext_cli::main_with_args(std::env::args_os()));
}
