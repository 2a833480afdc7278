fn main() {
    std::process::exit(clustertest::cli::run(std::env::args_os()));
}
