fn main() {
    std::process::exit(scriptalign_cli::run(std::env::args_os()));
}
