fn main() {
    std::process::exit(msinet::cli::run(std::env::args_os()));
}
