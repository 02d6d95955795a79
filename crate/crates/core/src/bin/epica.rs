use std::process::ExitCode;

use epica::cli::{execute, parse_args, SEED_ENV};
use epica::par;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed_env = std::env::var(SEED_ENV).ok();
    let result = parse_args(std::env::args_os(), seed_env.as_deref()).and_then(|inv| {
        if inv.config.threads > 0 && !par::set_threads(inv.config.threads) && par::parallel_enabled() {
            log::warn!("could not resize the worker pool");
        }
        execute(&inv)
    });
    match result {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
