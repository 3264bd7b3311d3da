fn main() {
    std::process::exit(trainer::cli::run_cli(std::env::args_os()));
}
