fn main() {
    std::process::exit(convsearch::cli::main());
}
