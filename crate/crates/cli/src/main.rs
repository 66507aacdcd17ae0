fn main() {
    std::process::exit(lyapinf_cli::run(std::env::args_os()));
}
