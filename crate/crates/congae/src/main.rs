fn main() {
    std::process::exit(congae::cli::run());
}
