fn main() {
    std::process::exit(stylecompat::cli::main_with_args(std::env::args_os()));
}
