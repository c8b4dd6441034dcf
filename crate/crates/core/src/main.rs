fn main() {
    std::process::exit(clm_design::cli::main_with_args(std::env::args_os()));
}
