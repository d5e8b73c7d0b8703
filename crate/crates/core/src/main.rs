fn main() {
    std::process::exit(ddpnas::cli::run(std::env::args_os()));
}
