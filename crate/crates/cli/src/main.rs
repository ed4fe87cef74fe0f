fn main() {
    std::process::exit(fier::cli::run_from(std::env::args_os()));
}
