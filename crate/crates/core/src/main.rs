fn main() {
    std::process::exit(pathrec::cli::run(std::env::args_os()));
}
