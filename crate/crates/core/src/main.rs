fn main() {
    std::process::exit(rts_sim::cli::main_with_args(std::env::args_os()));
}
