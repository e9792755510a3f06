fn main() {
    std::process::exit(pragmatune::cli::run());
}
