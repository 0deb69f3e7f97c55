fn main() {
    std::process::exit(trafficpm::cli::run(std::env::args_os()));
}
