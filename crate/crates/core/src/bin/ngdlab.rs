fn main() {
    std::process::exit(ngd_core::cli::main_from(std::env::args_os()));
}
