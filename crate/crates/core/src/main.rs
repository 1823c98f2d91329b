fn main() {
    std::process::exit(twinnav::cli::dispatch(std::env::args_os()));
}
