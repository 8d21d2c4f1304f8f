fn main() {
    std::process::exit(tgh_cli::run(std::env::args_os()));
}
