use clap::Parser;

use eqopt::cli::{run, Cli, Failure};

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    if let Err(failure) = run(cli) {
        match &failure {
            Failure::Usage(msg) => eprintln!("error: {msg}"),
            Failure::Domain(err) => eprintln!("error: {err:#}"),
        }
        std::process::exit(failure.exit_code());
    }
}
