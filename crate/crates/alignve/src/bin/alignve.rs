fn main() {
    std::process::exit(alignve::cli::run_cli(std::env::args()));
}
