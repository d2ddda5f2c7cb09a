use std::process::ExitCode;

use clap::Parser;
use eegdet_cli::{class_name, execute, exit_code, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let class = e.class();
            // One line: class for machines, detail for people.
            let detail = e.to_string().replace('\n', " ");
            eprintln!("eegdet: error[{}]: {detail}", class_name(class));
            ExitCode::from(exit_code(class) as u8)
        }
    }
}
