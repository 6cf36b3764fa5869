fn main() {
    std::process::exit(aggiv::cli::main_with_args(std::env::args_os()));
}
