fn main() {
    std::process::exit(davt::cli::main_with(std::env::args_os()));
}
