fn main() {
    std::process::exit(dygem::cli::run_from_env());
}
