fn main() {
    std::process::exit(nlse::cli::run(std::env::args_os()));
}
