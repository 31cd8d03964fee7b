fn main() {
    std::process::exit(ndiscan_cli::run(std::env::args_os()));
}
