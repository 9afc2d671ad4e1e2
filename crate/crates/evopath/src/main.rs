fn main() {
    std::process::exit(evopath::cli::run(std::env::args_os()));
}
