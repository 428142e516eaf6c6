fn main() {
    std::process::exit(stylebc_cli::run(std::env::args_os()));
}
