fn main() {
    std::process::exit(curvestream::cli::cli_main(std::env::args_os()));
}
