fn main() {
    std::process::exit(geomed_cli::run(std::env::args_os()));
}
