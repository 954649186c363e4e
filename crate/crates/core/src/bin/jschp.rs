fn main() {
    std::process::exit(jschp::cli::run(std::env::args_os()));
}
