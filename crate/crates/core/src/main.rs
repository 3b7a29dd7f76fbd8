fn main() {
    std::process::exit(translationese::cli::run(std::env::args_os()));
}
