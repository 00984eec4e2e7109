use clap::Parser;
use gcpairs_cli::commands::{run, Cli};

fn main() {
    // Parse errors (unknown flags, bad values) exit with code 2 via clap.
    let cli = Cli::parse();
    // Error displays already carry their cause, so one line is enough.
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
