fn main() {
    std::process::exit(gliding_vertex::cli::run(std::env::args_os()));
}
