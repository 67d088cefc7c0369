fn main() {
    std::process::exit(gridpwl::cli::main_with_args(std::env::args_os()));
}
