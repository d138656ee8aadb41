fn main() {
    std::process::exit(stylefield::cli::run(std::env::args_os()));
}
