use std::process::ExitCode;

use clap::Parser;

use conceptmark_cli::{run_cli, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    conceptmark_core::parallel::init_from_env();
    match run_cli(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("conceptmark: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
