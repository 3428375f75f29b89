fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(teleop_predictor::cli::dispatch(&args));
}
