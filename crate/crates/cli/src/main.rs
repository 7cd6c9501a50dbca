fn main() {
    std::process::exit(wassfem_cli::run(std::env::args_os()));
}
