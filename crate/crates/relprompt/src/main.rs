fn main() {
    std::process::exit(relprompt::cli::dispatch(std::env::args_os()));
}
