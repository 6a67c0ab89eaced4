fn main() {
    std::process::exit(reflectwalk::cli::main_with_args(std::env::args_os()));
}
