fn main() {
    std::process::exit(lunguage::cli::run(std::env::args_os()));
}
