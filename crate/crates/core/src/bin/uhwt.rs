fn main() {
    std::process::exit(uhwt::cli::main_with_args(std::env::args_os()));
}
