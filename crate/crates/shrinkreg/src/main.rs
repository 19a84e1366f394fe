fn main() {
    std::process::exit(shrinkreg::cli::run());
}
