fn main() {
    std::process::exit(dialog_sentiment::cli::run(std::env::args_os()));
}
