fn main() {
    env_logger::init();
    std::process::exit(sparsetrack::cli::run(std::env::args_os()));
}
