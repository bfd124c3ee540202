fn main() {
    std::process::exit(bdp::cli::main());
}
