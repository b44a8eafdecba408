fn main() {
    std::process::exit(vextrap::cli::main_from_env());
}
