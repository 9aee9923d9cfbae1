fn main() {
    std::process::exit(mpl_cli::run(std::env::args_os()));
}
