fn main() {
    std::process::exit(pnlc_cli::run(std::env::args().skip(1)));
}
