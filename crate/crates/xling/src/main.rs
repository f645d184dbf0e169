fn main() {
    xling::cli::run();
}
