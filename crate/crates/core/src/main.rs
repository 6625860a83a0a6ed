fn main() {
    std::process::exit(pointnorm::cli::main_with(std::env::args_os()));
}
