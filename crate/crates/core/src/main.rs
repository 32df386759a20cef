fn main() {
    std::process::exit(localglobal::cli::run_command(std::env::args_os()));
}
