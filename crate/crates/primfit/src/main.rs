fn main() {
    std::process::exit(primfit::cli::run());
}
