fn main() {
    std::process::exit(listnet::cli::main_with_args(std::env::args_os()));
}
