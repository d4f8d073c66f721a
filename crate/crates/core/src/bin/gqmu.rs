fn main() {
    std::process::exit(gqmu::cli::run(std::env::args_os()));
}
