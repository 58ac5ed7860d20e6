fn main() {
    std::process::exit(ace_cert::cli::main());
}
