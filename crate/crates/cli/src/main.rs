fn main() {
    std::process::exit(ctxrank_cli::run_command(std::env::args_os()));
}
