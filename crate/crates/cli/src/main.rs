fn main() {
    std::process::exit(scas_cli::run(std::env::args_os()));
}
