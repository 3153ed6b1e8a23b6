fn main() {
    std::process::exit(magnifier::cli::run_cli(std::env::args_os()));
}
