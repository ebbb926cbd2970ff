fn main() {
    std::process::exit(limbplan::cli::run(std::env::args_os()));
}
