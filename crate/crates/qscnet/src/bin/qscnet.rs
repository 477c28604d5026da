fn main() {
    std::process::exit(qscnet::cli::run());
}
