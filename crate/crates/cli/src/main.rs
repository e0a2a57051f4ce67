use clap::Parser;
use simeval_cli::cli::Cli;
use simeval_cli::{commands, progress};

fn main() {
    // clap prints usage and exits 2 on bad arguments
    let cli = Cli::parse();
    if let Err(e) = commands::run(cli.command) {
        progress::error("failed", &format!("{e:#}"));
        std::process::exit(1);
    }
}
