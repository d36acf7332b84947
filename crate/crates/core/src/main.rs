fn main() {
    std::process::exit(anysleep::cli::run(std::env::args_os()));
}
