fn main() {
    std::process::exit(siamese_attack::cli::main_with_args(std::env::args_os()));
}
