fn main() {
    std::process::exit(logoforge::cli::run(std::env::args_os()));
}
