fn main() {
    std::process::exit(simsiam::cli::main_with_args(std::env::args_os()));
}
