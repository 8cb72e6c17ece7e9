fn main() {
    std::process::exit(modalmetric::cli::run(std::env::args_os()));
}
