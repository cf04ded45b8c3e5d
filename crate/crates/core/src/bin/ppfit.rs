fn main() {
    std::process::exit(ppfit::cli::run(std::env::args_os()));
}
