fn main() {
    std::process::exit(funcbal::cli::run());
}
