fn main() {
    std::process::exit(bandgap::cli::main_with_args(std::env::args_os()));
}
