fn main() {
    std::process::exit(gvdiff_cli::run_cli(std::env::args_os()));
}
