fn main() {
    std::process::exit(audiolayers::cli::main());
}
