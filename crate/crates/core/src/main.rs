fn main() {
    std::process::exit(radloc::cli::run(std::env::args_os()));
}
