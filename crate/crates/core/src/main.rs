fn main() {
    std::process::exit(ricforge::cli::run(std::env::args_os()));
}
