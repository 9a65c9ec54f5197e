fn main() {
    std::process::exit(mope_cli::run(std::env::args_os().collect()));
}
