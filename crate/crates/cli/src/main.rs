fn main() {
    std::process::exit(litho_cli::run(std::env::args_os()));
}
