fn main() {
    std::process::exit(occtool::run_cli(std::env::args_os()));
}
