//! Scenario configuration. Parsing reports the JSON path of the offending
//! field; [`ScenarioConfig::validate`] adds the semantic checks.

use std::fmt;
use std::path::{Path, PathBuf};

use munu_core::dichotomy::DichotomyCertificate;
use munu_core::rates::Domain;
use munu_core::system::SystemFile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Verify,
    Characterize,
    Admissibility,
    Perturb,
    Counterexample,
    Sweep,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Verify => "verify",
            ScenarioName::Characterize => "characterize",
            ScenarioName::Admissibility => "admissibility",
            ScenarioName::Perturb => "perturb",
            ScenarioName::Counterexample => "counterexample",
            ScenarioName::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub min: i64,
    pub max: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub index: i64,
    /// Natural log of the tabulated value.
    pub log_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSource {
    Inline {
        system: SystemFile,
    },
    /// A JSON system file, relative to the config file's directory.
    File {
        path: PathBuf,
    },
    /// Diagonal exponents conjugated by a seeded similarity; negative
    /// exponents are stable.
    Planted {
        exponents: Vec<f64>,
        #[serde(default = "one")]
        similarity_cond: f64,
        #[serde(default)]
        vary_similarity: bool,
        /// Seeds the similarity; independent of the run seed.
        #[serde(default)]
        seed: u64,
    },
    /// `A_n = (μ_{n+1}/μ_n)^{−1/2}` with `μ_n = e^{e^n}`; implies the rate.
    ScalarExample {
        window: WindowSpec,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Exponential { domain: Domain, window: WindowSpec },
    Polynomial { domain: Domain, window: WindowSpec },
    Logarithmic { domain: Domain, window: WindowSpec },
    DoublyExponential { domain: Domain, window: WindowSpec },
    Table { domain: Domain, entries: Vec<TableEntry> },
}

impl RateSpec {
    pub fn domain(&self) -> Domain {
        match self {
            RateSpec::Exponential { domain, .. }
            | RateSpec::Polynomial { domain, .. }
            | RateSpec::Logarithmic { domain, .. }
            | RateSpec::DoublyExponential { domain, .. }
            | RateSpec::Table { domain, .. } => *domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NuSpec {
    #[default]
    Ones,
    Uniform {
        log_c: f64,
    },
    Power {
        epsilon: f64,
    },
    Table {
        entries: Vec<TableEntry>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixAt {
    pub n: i64,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProjectionSource {
    /// Planted projections for planted systems, the identity for the
    /// worked example, the computed splitting otherwise.
    #[default]
    Auto,
    Identity,
    Planted,
    Characterize,
    Inline {
        matrices: Vec<MatrixAt>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    #[serde(rename = "D")]
    pub d: f64,
    pub lambda: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl From<CertificateSpec> for DichotomyCertificate {
    fn from(c: CertificateSpec) -> Self {
        DichotomyCertificate {
            d: c.d,
            lambda: c.lambda,
            epsilon: c.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structural_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_condition: Option<f64>,
    /// Relative tolerance of `‖x‖_{∞,β} ≤ D‖y‖_{1,β}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// Seeded input with comparable weighted terms.
    #[default]
    Random,
    Impulse {
        n: i64,
        vector: Vec<f64>,
    },
    /// One vector per window index.
    Inline {
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSpec {
    #[serde(default = "default_n_max")]
    pub n_max: i64,
}

fn default_n_max() -> i64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaEntry {
    pub index: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaSpec {
    Geometric { ratio: f64 },
    Table { values: Vec<GammaEntry> },
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Geometric { ratio: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub c: f64,
    #[serde(default)]
    pub gamma: GammaSpec,
    /// Defaults to the first entry of `betas`, then to the middle of the
    /// admissible range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "yes")]
    pub neumann: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Beta,
    C,
    Seed,
    WindowLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioName,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioName>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSpec>,
    #[serde(default)]
    pub nu: NuSpec,
    #[serde(default)]
    pub projections: ProjectionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub input: InputSpec,
    /// Random inputs tried for the sampled lower bound on `‖T_β‖`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_samples() -> usize {
    16
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

/// A configuration problem, located by its JSON path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn scenario(&self) -> Result<ScenarioName, ConfigError> {
        self.scenario
            .ok_or_else(|| ConfigError::new("scenario", "missing (set it in the config or with --scenario)"))
    }

    /// Checks that do not need any numerics. Relative file paths resolve
    /// against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<(), ConfigError> {
        let scenario = self.scenario()?;
        if self.formats.is_empty() {
            return Err(ConfigError::new("formats", "at least one output format is required"));
        }
        for (i, b) in self.betas.iter().enumerate() {
            if !b.is_finite() {
                return Err(ConfigError::new(format!("betas[{i}]"), "must be finite"));
            }
        }
        if let Some(c) = &self.certificate {
            if !(c.d > 0.0 && c.d.is_finite()) {
                return Err(ConfigError::new("certificate.D", "must be positive and finite"));
            }
            if !(c.lambda > 0.0 && c.lambda.is_finite()) {
                return Err(ConfigError::new("certificate.lambda", "must be positive and finite"));
            }
            if !(c.epsilon >= 0.0 && c.epsilon.is_finite()) {
                return Err(ConfigError::new(
                    "certificate.epsilon",
                    "must be non-negative and finite",
                ));
            }
        }
        if self.samples > 100_000 {
            return Err(ConfigError::new("samples", "at most 100000"));
        }
        self.validate_tolerances()?;
        match scenario {
            ScenarioName::Counterexample => {
                let n = self.counterexample.map_or(10, |c| c.n_max);
                if !(1..=40).contains(&n) {
                    return Err(ConfigError::new(
                        "counterexample.n_max",
                        format!("must lie in [1, 40], got {n}"),
                    ));
                }
                return Ok(());
            }
            ScenarioName::Perturb => self.validate_perturbation()?,
            ScenarioName::Sweep => self.validate_sweep()?,
            _ => {}
        }
        self.validate_system(base_dir)
    }

    fn validate_tolerances(&self) -> Result<(), ConfigError> {
        let t = &self.tolerances;
        let checks = [
            ("structural_tol", t.structural_tol),
            ("slack_tol", t.slack_tol),
            ("gap_threshold", t.gap_threshold),
            ("resolution", t.resolution),
            ("max_condition", t.max_condition),
            ("bound_tol", t.bound_tol),
            ("residual_tol", t.residual_tol),
            ("oracle_tol", t.oracle_tol),
        ];
        for (name, v) in checks {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(ConfigError::new(
                        format!("tolerances.{name}"),
                        "must be non-negative and finite",
                    ));
                }
            }
        }
        if let Some(c) = t.cutoff {
            if !c.is_finite() {
                return Err(ConfigError::new("tolerances.cutoff", "must be finite"));
            }
        }
        Ok(())
    }

    fn validate_perturbation(&self) -> Result<(), ConfigError> {
        let p = self
            .perturbation
            .as_ref()
            .ok_or_else(|| ConfigError::new("perturbation", "required by this scenario"))?;
        if !(p.c >= 0.0 && p.c.is_finite()) {
            return Err(ConfigError::new("perturbation.c", "must be non-negative and finite"));
        }
        if let Some(b) = p.beta {
            if !b.is_finite() {
                return Err(ConfigError::new("perturbation.beta", "must be finite"));
            }
        }
        match &p.gamma {
            GammaSpec::Geometric { ratio } if !(*ratio > 0.0 && *ratio < 1.0) => {
                Err(ConfigError::new("perturbation.gamma.ratio", "must lie in (0, 1)"))
            }
            GammaSpec::Table { values } => {
                for (i, g) in values.iter().enumerate() {
                    if !(g.value > 0.0 && g.value.is_finite()) {
                        return Err(ConfigError::new(
                            format!("perturbation.gamma.values[{i}].value"),
                            "must be positive and finite",
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn validate_sweep(&self) -> Result<(), ConfigError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| ConfigError::new("sweep", "required by this scenario"))?;
        if !matches!(s.base, ScenarioName::Admissibility | ScenarioName::Perturb) {
            return Err(ConfigError::new("sweep.base", "must be admissibility or perturb"));
        }
        if s.values.is_empty() {
            return Err(ConfigError::new("sweep.values", "must not be empty"));
        }
        if s.axis == SweepAxis::C && s.base != ScenarioName::Perturb {
            return Err(ConfigError::new("sweep.axis", "a c axis needs base perturb"));
        }
        for (i, v) in s.values.iter().enumerate() {
            let path = format!("sweep.values[{i}]");
            let ok = match s.axis {
                SweepAxis::Beta => v.is_finite(),
                SweepAxis::C => *v >= 0.0 && v.is_finite(),
                SweepAxis::Seed => *v >= 0.0 && v.fract() == 0.0 && *v < 2f64.powi(53),
                SweepAxis::WindowLength => *v >= 2.0 && v.fract() == 0.0 && *v <= 1e6,
            };
            if !ok {
                let what = match s.axis {
                    SweepAxis::Beta => "a finite beta",
                    SweepAxis::C => "a non-negative finite c",
                    SweepAxis::Seed => "a non-negative integer seed",
                    SweepAxis::WindowLength => "an integer window length >= 2",
                };
                return Err(ConfigError::new(path, format!("expected {what}, got {v}")));
            }
        }
        if s.axis == SweepAxis::WindowLength {
            match (&self.system, &self.rate) {
                (Some(SystemSource::Planted { .. }), Some(r)) if !matches!(r, RateSpec::Table { .. }) => {}
                (Some(SystemSource::ScalarExample { .. }), _) => {}
                _ => {
                    return Err(ConfigError::new(
                        "sweep.axis",
                        "window_length sweeps need a planted system with an analytic rate or the worked example",
                    ))
                }
            }
        }
        if s.base == ScenarioName::Perturb {
            self.validate_perturbation()?;
        }
        Ok(())
    }

    fn validate_system(&self, base_dir: &Path) -> Result<(), ConfigError> {
        let sys = self
            .system
            .as_ref()
            .ok_or_else(|| ConfigError::new("system", "required by this scenario"))?;
        match sys {
            SystemSource::ScalarExample { .. } => {
                if self.rate.is_some() {
                    return Err(ConfigError::new("rate", "the worked example fixes its own rate"));
                }
            }
            _ => {
                if self.rate.is_none() {
                    return Err(ConfigError::new("rate", "required for this system source"));
                }
            }
        }
        match sys {
            SystemSource::File { path } => {
                let p = base_dir.join(path);
                if !p.is_file() {
                    return Err(ConfigError::new(
                        "system.path",
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
            SystemSource::Planted {
                exponents,
                similarity_cond,
                ..
            } => {
                if exponents.is_empty() {
                    return Err(ConfigError::new("system.exponents", "must not be empty"));
                }
                for (i, e) in exponents.iter().enumerate() {
                    if !(e.is_finite() && *e != 0.0) {
                        return Err(ConfigError::new(
                            format!("system.exponents[{i}]"),
                            "must be finite and nonzero",
                        ));
                    }
                }
                if !(*similarity_cond >= 1.0 && similarity_cond.is_finite()) {
                    return Err(ConfigError::new("system.similarity_cond", "must be finite and >= 1"));
                }
            }
            _ => {}
        }
        if matches!(self.projections, ProjectionSource::Planted) && !matches!(sys, SystemSource::Planted { .. }) {
            return Err(ConfigError::new(
                "projections.source",
                "planted projections need a planted system",
            ));
        }
        Ok(())
    }
}
