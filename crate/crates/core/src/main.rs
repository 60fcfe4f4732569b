use clap::Parser;
use env_logger::Env;

use pivo::cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("PIVO_LOG", "warn")).init();
    std::process::exit(execute(Cli::parse()));
}
