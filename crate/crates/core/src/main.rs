fn main() { std::process::exit(ssbsim::cli::run()) }
