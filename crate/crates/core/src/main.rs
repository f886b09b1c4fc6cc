fn main() {
    std::process::exit(levy_homog::cli::run(std::env::args_os()));
}
