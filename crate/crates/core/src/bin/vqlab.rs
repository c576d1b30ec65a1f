fn main() {
    std::process::exit(vqlab::cli::main());
}
