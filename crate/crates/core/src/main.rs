fn main() {
    std::process::exit(topicnhg::cli::run(std::env::args_os()));
}
