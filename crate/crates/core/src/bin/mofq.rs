fn main() {
    std::process::exit(mofq::cli::run(std::env::args_os()));
}
