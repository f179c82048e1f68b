fn main() {
    std::process::exit(lltk_cli::run(std::env::args_os()));
}
