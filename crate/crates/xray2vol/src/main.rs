use std::process::ExitCode;

use clap::Parser;
use xray2vol::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match xray2vol::init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
