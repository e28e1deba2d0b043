fn main() {
    std::process::exit(priorground::cli::dispatch(std::env::args_os()));
}
