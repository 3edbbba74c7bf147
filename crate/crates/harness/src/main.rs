fn main() {
    std::process::exit(vhot_harness::cli::run(std::env::args_os()));
}
