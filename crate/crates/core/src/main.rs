fn main() {
    std::process::exit(slender::app::cli::main_with_args(std::env::args_os()));
}
