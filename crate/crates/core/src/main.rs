fn main() {
    std::process::exit(aligncap::cli::dispatch(std::env::args_os()));
}
