fn main() {
    std::process::exit(fusion::cli::run(std::env::args_os()));
}
