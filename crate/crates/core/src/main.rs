fn main() {
    std::process::exit(tot::cli::run(std::env::args_os()));
}
