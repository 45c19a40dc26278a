fn main() {
    std::process::exit(attnprint_cli::run(std::env::args_os()));
}
