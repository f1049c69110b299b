fn main() {
    std::process::exit(tactile_rag::harness::cli::run(std::env::args_os()));
}
