fn main() {
    std::process::exit(eyecenter_cli::run(std::env::args()));
}
