fn main() {
    std::process::exit(thanos_cli::run(std::env::args_os()));
}
