fn main() {
    std::process::exit(mihe_core::cli::main_with_args(std::env::args_os()));
}
