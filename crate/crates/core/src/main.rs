fn main() {
    std::process::exit(riskneutral::cli::run(std::env::args_os()));
}
