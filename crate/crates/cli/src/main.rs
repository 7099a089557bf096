fn main() {
    std::process::exit(ncarl_cli::main_with(std::env::args_os()));
}
