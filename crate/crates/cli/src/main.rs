fn main() {
    std::process::exit(nusr::cli::run(std::env::args_os()));
}
