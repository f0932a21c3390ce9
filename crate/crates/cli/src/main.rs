fn main() {
    std::process::exit(newswatch_cli::app::main_with_args(std::env::args_os()));
}
