fn main() {
    std::process::exit(ldr_core::cli::run());
}
