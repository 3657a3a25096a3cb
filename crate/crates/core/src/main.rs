fn main() {
    std::process::exit(fdnet::cli::main_with_args(std::env::args_os()));
}
