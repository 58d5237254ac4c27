fn main() {
    std::process::exit(lass::cli::run(std::env::args_os()));
}
