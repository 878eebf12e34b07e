fn main() {
    std::process::exit(condcov::cli::run(std::env::args_os()));
}
