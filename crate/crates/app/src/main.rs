fn main() {
    std::process::exit(bfsurf_app::cli::run(std::env::args_os()));
}
