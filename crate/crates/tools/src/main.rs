fn main() {
    std::process::exit(gridfed_tools::cli::run(std::env::args_os()));
}
