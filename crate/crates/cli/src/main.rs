use std::process::ExitCode;

use clap::Parser;

mod cli;
mod commands;
mod output;

use cli::{Cli, Command};
use output::Run;

/// Bad arguments or inputs detected by the front end.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ridge_debias::Error>() {
            return if e.is_usage() { 2 } else { 1 };
        }
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| UsageError(format!("cannot start {threads} worker threads: {e}")))?;
    }
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Debias(_) => "debias",
        Command::Screen(_) => "screen",
        Command::Infer(_) => "infer",
        Command::Tradeoff(_) => "tradeoff",
        Command::Simulate(_) => "simulate",
        Command::Tune(_) => "tune",
        Command::Forecast(_) => "forecast",
    };
    let mut run = Run::new(&cli.out_dir, cli.format, name)?;
    match &cli.command {
        Command::Fit(a) => commands::fit::run_fit(a, &mut run)?,
        Command::Debias(a) => commands::fit::run_debias(a, &mut run)?,
        Command::Screen(a) => commands::screen::run(a, &mut run)?,
        Command::Infer(a) => commands::infer::run(a, &mut run)?,
        Command::Tradeoff(a) => commands::tradeoff::run(a, &mut run)?,
        Command::Simulate(a) => commands::simulate::run(a, &mut run)?,
        Command::Tune(a) => commands::tune::run(a, &mut run)?,
        Command::Forecast(a) => commands::forecast::run(a, &mut run)?,
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let usage = anyhow::Error::from(ridge_debias::Error::MissingResponse("y".into()));
        assert_eq!(exit_code(&usage), 2);
        let numeric = anyhow::Error::from(ridge_debias::Error::ZeroRank);
        assert_eq!(exit_code(&numeric), 1);
        let io = anyhow::Error::from(std::io::Error::other("disk")).context("cannot write");
        assert_eq!(exit_code(&io), 2);
        assert_eq!(exit_code(&UsageError("bad".into()).into()), 2);
    }
}
