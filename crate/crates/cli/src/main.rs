fn main() {
    std::process::exit(stasunet_cli::main_with(std::env::args_os()));
}
