fn main() {
    std::process::exit(tentaclenet::cli::run(std::env::args().skip(1)));
}
