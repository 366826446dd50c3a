fn main() {
    std::process::exit(versatune_cli::run(std::env::args_os()));
}
