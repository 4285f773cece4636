fn main() {
    std::process::exit(countdpd::cli::parse_and_dispatch(std::env::args_os()));
}
