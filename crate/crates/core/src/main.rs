fn main() {
    std::process::exit(mimetic_ns::cli::run());
}
