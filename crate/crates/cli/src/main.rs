fn main() {
    std::process::exit(egoflow_cli::run(std::env::args_os()));
}
