fn main() {
    std::process::exit(totr_core::cli::run(std::env::args_os()));
}
