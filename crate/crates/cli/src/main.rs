fn main() {
    std::process::exit(popgrid_cli::main_with_args(std::env::args_os()));
}
