fn main() {
    std::process::exit(gmmcache::cli::run(std::env::args_os()));
}
