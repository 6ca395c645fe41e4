fn main() {
    let code = gridsafe_cli::run(std::env::args_os());
    std::process::exit(code);
}
