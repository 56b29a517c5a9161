fn main() {
    std::process::exit(emf_core::cli::dispatch(std::env::args_os()));
}
