fn main() {
    std::process::exit(owc::cli::run(std::env::args_os()));
}
