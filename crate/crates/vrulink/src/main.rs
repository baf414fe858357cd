fn main() {
    std::process::exit(vrulink::cli::main_from(std::env::args_os()));
}
