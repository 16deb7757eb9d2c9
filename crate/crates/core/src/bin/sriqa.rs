fn main() {
    std::process::exit(sriqa::cli::run(std::env::args_os()));
}
