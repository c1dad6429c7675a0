use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use munu_cli::config::{Format, ScenarioName};
use munu_cli::{run, Overrides, RunRequest, EXIT_CONFIG};

/// Run a (mu,nu)-dichotomy scenario from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "munu", version)]
struct Args {
    /// Scenario configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the scenario named in the config.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioName>,
    #[arg(long, value_name = "PATH", default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output formats, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Option<Vec<Format>>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let req = RunRequest {
        config: args.config,
        overrides: Overrides {
            scenario: args.scenario,
            seed: args.seed,
            formats: args.format,
        },
        out_dir: args.out_dir,
        threads: args.threads,
    };
    match run(&req) {
        Ok(s) => {
            let verdict = match s.verdict {
                munu_cli::output::Verdict::Pass => "pass",
                munu_cli::output::Verdict::Fail => "fail",
            };
            println!("verdict: {verdict}");
            if let Some(e) = &s.error {
                println!("analysis failure [{}]: {}", e.code, e.message);
            }
            for f in &s.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(s.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
