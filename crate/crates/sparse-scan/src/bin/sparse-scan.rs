fn main() {
    std::process::exit(sparse_scan::cli::main());
}
