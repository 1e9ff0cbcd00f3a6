fn main() {
    std::process::exit(msrl_core::cli::run(std::env::args_os()));
}
