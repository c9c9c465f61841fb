use std::process::ExitCode;

use clap::Parser;
use oe_market::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OE_MARKET_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
