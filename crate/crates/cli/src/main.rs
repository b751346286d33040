fn main() {
    std::process::exit(slotwm_cli::run_command(std::env::args_os()));
}
