use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use ergograph_cli::{render_report, run, RunConfig, EXIT_ERROR};

fn main() -> ExitCode {
    let config = RunConfig::parse();
    if let Some(threads) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    let outcome = run(&config);
    if let Some(message) = &outcome.message {
        let label = if outcome.report.is_some() { "unmet" } else { "error" };
        eprintln!("{label}: {message}");
    }
    if let Some(report) = &outcome.report {
        let written = render_report(report, config.format).and_then(|bytes| {
            let result = match &config.output {
                Some(path) => std::fs::write(path, bytes),
                None => std::io::stdout().lock().write_all(&bytes),
            };
            result.map_err(|e| ergograph_cli::CliError::Argument(format!("cannot write report: {e}")))
        });
        if let Err(e) = written {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}
