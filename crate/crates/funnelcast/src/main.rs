fn main() {
    std::process::exit(funnelcast::cli::run(std::env::args()));
}
