fn main() {
    segfactory_cli::init_logging();
    std::process::exit(segfactory_cli::run(std::env::args_os()));
}
