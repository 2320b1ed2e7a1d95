fn main() {
    std::process::exit(qaforge::cli::run(std::env::args_os()));
}
