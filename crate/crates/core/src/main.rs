use std::process::ExitCode;

use clap::Parser;
use esdmix::cli::{execute, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("esdmix: {e}");
            ExitCode::FAILURE
        }
    }
}
