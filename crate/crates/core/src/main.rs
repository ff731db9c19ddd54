fn main() {
    std::process::exit(causal_gmm::cli::main_with_args(std::env::args_os()));
}
