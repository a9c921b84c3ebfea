fn main() {
    std::process::exit(strata_core::cli::dispatch(std::env::args()));
}
