use clap::Parser;
use prfmpc::cli::{self, Cli};

fn main() {
    if let Err(e) = cli::run(Cli::parse()) {
        eprintln!("prfmpc: {e}");
        std::process::exit(e.exit_code());
    }
}
