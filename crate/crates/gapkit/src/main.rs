use clap::Parser;
use gapkit::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("gapkit: {e}");
        std::process::exit(e.exit_code());
    }
}
