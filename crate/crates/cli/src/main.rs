fn main() {
    std::process::exit(fmdt_cli::main_with_args(std::env::args_os()));
}
