fn main() {
    if let Err(e) = vlnsim::cli::run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
