fn main() {
    std::process::exit(certsmooth::cli::main_with_args(std::env::args_os()));
}
