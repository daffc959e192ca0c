fn main() {
    std::process::exit(cacto_sl::cli::main_with_args(std::env::args_os()));
}
