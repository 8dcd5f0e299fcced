fn main() {
    std::process::exit(rcmdp_cli::run(std::env::args_os()));
}
