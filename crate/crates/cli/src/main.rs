fn main() {
    std::process::exit(curvewalk_cli::run(std::env::args_os()));
}
