fn main() {
    std::process::exit(hallu_pref::cli::run(std::env::args_os()));
}
