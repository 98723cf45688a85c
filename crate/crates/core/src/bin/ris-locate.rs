fn main() {
    std::process::exit(ris_locate::cli::main_with_args(std::env::args_os()));
}
