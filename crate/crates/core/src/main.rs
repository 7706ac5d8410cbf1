use clap::Parser;

fn main() {
    let cli = hawkes_mca::cli::Cli::parse();
    if let Err(err) = hawkes_mca::cli::run(cli) {
        let kind = match err.exit_code() {
            2 => "config",
            3 => "invariant",
            4 => "numeric",
            _ => "error",
        };
        let record = serde_json::json!({
            "error": kind,
            "message": err.to_string(),
        });
        eprintln!("{record}");
        std::process::exit(err.exit_code());
    }
}
