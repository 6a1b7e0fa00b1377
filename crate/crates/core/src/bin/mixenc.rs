fn main() {
    std::process::exit(mixenc::evalcli::run_cli(std::env::args_os()));
}
