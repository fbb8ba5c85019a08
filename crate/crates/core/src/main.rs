fn main() {
    std::process::exit(mesa_limit::cli::main_with_args(std::env::args_os()));
}
