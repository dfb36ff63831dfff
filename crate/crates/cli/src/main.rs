use clap::Parser;

use egotime::commands::{run, Cli};
use egotime::exit_code;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
