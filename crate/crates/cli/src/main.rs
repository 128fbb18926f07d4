fn main() {
    std::process::exit(subdyn_cli::dispatch(std::env::args_os()));
}
