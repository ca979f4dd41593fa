fn main() {
    std::process::exit(martsia_cli::commands::main_with_args(std::env::args()));
}
