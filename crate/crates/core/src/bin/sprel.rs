fn main() {
    std::process::exit(sprel::cli::run());
}
