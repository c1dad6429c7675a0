//! Scenario runner for `munu-core`.
//!
//! A run reads a JSON [`config::ScenarioConfig`], dispatches to the library,
//! and writes `report.json`, one CSV per table and a `timing.json` sidecar.
//! Exit codes: 0 when the verdict passes, 2 when the analysis says no, 1 for
//! configuration and I/O errors.

pub mod config;
pub mod output;
pub mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

use config::{ConfigError, Format, ScenarioConfig};
use output::{report_bytes, write_atomic, Failure, LibraryInfo, RunReport, Table, Timing, Verdict, FORMAT_VERSION};
use scenarios::{run_scenario, RunError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ANALYSIS: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
}

/// Report plus the CSV tables of one run, before anything is written.
#[derive(Debug, Clone)]
pub struct Execution {
    pub report: RunReport,
    pub tables: Vec<Table>,
}

/// Validates `cfg` and runs its scenario in the current rayon pool.
pub fn execute(cfg: &ScenarioConfig, base_dir: &Path) -> Result<Execution, ConfigError> {
    cfg.validate(base_dir)?;
    let scenario = cfg.scenario()?;
    let (results, tables, verdict, error) = match run_scenario(scenario, cfg, base_dir) {
        Ok(o) => {
            let v = if o.pass { Verdict::Pass } else { Verdict::Fail };
            (o.results, o.tables, v, None)
        }
        Err(RunError::Config(e)) => return Err(e),
        Err(RunError::BetaOutOfRange(m)) => return Err(ConfigError::new("betas", m)),
        Err(RunError::Analysis(e)) => (
            serde_json::Value::Object(Default::default()),
            Vec::new(),
            Verdict::Fail,
            Some(Failure::from(&e)),
        ),
    };
    let exit_code = match verdict {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_ANALYSIS,
    };
    Ok(Execution {
        report: RunReport {
            format_version: FORMAT_VERSION,
            library: LibraryInfo::current(),
            scenario,
            seed: cfg.seed,
            config: cfg.clone(),
            verdict,
            exit_code,
            error,
            results,
        },
        tables,
    })
}

/// Command-line level settings that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<config::ScenarioName>,
    pub seed: Option<u64>,
    pub formats: Option<Vec<Format>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.scenario {
            cfg.scenario = Some(s);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = &self.formats {
            let mut f = f.clone();
            f.sort();
            f.dedup();
            cfg.formats = f;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub exit_code: i32,
    pub verdict: Verdict,
    pub files: Vec<PathBuf>,
    pub error: Option<Failure>,
}

/// Loads, runs and writes everything atomically into `out_dir`.
pub fn run(req: &RunRequest) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let (mut cfg, base_dir) = match &req.config {
        Some(p) => (
            ScenarioConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ScenarioConfig::from_json("{}")?, PathBuf::from(".")),
    };
    req.overrides.apply(&mut cfg);
    let (exec, threads) = match req.threads {
        Some(0) => return Err(ConfigError::new("--threads", "must be at least 1").into()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::ThreadPool(e.to_string()))?;
            (pool.install(|| execute(&cfg, &base_dir))?, n)
        }
        None => (execute(&cfg, &base_dir)?, rayon::current_num_threads()),
    };
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if cfg.formats.contains(&Format::Json) {
        files.push(("report.json".into(), report_bytes(&exec.report)?));
    }
    if cfg.formats.contains(&Format::Csv) {
        for t in &exec.tables {
            files.push((format!("{}.csv", t.name), t.to_csv()?));
        }
    }
    let timing = Timing {
        scenario: exec.report.scenario,
        threads,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let mut tb = serde_json::to_vec_pretty(&timing).map_err(std::io::Error::other)?;
    tb.push(b'\n');
    files.push(("timing.json".into(), tb));
    write_atomic(&req.out_dir, &files)?;
    Ok(RunSummary {
        exit_code: exec.report.exit_code,
        verdict: exec.report.verdict,
        files: files.iter().map(|(n, _)| req.out_dir.join(n)).collect(),
        error: exec.report.error.clone(),
    })
}
