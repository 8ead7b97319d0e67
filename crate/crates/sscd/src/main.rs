fn main() {
    std::process::exit(sscd::cli::cli_main(std::env::args_os()));
}
