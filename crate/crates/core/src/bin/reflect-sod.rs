fn main() {
    std::process::exit(reflect_sod::cli::run(std::env::args_os()));
}
