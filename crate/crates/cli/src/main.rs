fn main() {
    std::process::exit(multisage_cli::run(std::env::args_os()));
}
