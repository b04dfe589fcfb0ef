fn main() {
    std::process::exit(regiongraph::cli::main());
}
