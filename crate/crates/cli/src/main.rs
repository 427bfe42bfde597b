fn main() {
    std::process::exit(icorr_cli::run(std::env::args_os()));
}
