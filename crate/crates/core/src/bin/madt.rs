fn main() {
    std::process::exit(madt::cli::run(std::env::args_os()));
}
