fn main() {
    std::process::exit(obstacle3d::cli::cli_main(std::env::args_os()));
}
