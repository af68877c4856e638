fn main() {
    std::process::exit(harderlasso::cli::run(std::env::args_os()));
}
