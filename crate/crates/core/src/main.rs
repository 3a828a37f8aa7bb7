use clap::Parser;

use dsc_accel::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
