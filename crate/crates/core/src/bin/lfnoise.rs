fn main() {
    std::process::exit(lfnoise::cli::run(std::env::args_os()));
}
