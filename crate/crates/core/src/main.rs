fn main() {
    std::process::exit(flowpose::cli::run());
}
