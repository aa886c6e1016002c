fn main() {
    std::process::exit(causal_dml::cli::run_cli(std::env::args_os()));
}
