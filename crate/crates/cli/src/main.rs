fn main() {
    let code = rfs_cli::cli_dispatch(std::env::args().skip(1));
    std::process::exit(code);
}
