fn main() {
    std::process::exit(sinebeta::cli::run());
}
