fn main() {
    std::process::exit(epf_cli::run(std::env::args_os()));
}
