fn main() {
    env_logger::init();
    std::process::exit(sysid::cli::run(std::env::args_os()));
}
