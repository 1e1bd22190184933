fn main() {
    std::process::exit(pmopt::cli::main_with(std::env::args_os()));
}
