fn main() {
    std::process::exit(crowd_assign::cli::main_with_args(std::env::args_os()));
}
