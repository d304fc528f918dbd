fn main() {
    std::process::exit(tubekit::cli::run_from(std::env::args_os()));
}
