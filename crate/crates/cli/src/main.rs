//! `lic`: generate weights, encode and decode images, benchmark the codec
//! pipelines and stream frames over TCP.

mod args;
mod commands;
mod failure;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lic: {e}");
            ExitCode::from(e.code())
        }
    }
}
