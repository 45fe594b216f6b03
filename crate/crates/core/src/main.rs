fn main() {
    std::process::exit(cartoondiff::cli::run(std::env::args_os()));
}
