fn main() {
    std::process::exit(gtr::cli::run(std::env::args_os()));
}
