fn main() {
    std::process::exit(dsgtf_cli::run(std::env::args_os()));
}
