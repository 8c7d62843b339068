fn main() {
    std::process::exit(divcontagion::cli::main_with_args(std::env::args_os()));
}
