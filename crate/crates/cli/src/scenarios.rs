//! Scenario dispatch: builds the model a config describes and runs the
//! library operations on it.

use std::collections::BTreeMap;
use std::path::Path;

use munu_core::admissibility::{
    operator_norm_t, oracle_solve_weighted, random_input, run_counterexample, solve_admissibility, uniqueness_probe,
    weighted_relative_error, Boundary, UniquenessVerdict,
};
use munu_core::dichotomy::{
    beta_range, fit_certificate, verify_dichotomy, BetaRange, CertificateFit, DichotomyCertificate, ProjectionFamily,
    Side, VerifyOptions,
};
use munu_core::rates::{Domain, GrowthRate, NormVariant, NuSequence, RateKind, Sequence, Window};
use munu_core::robustness::{
    make_perturbation, smallness_margin, verify_persistence, DriftRow, Gamma, PersistenceReport, PersistenceVerdict,
    PerturbationSpec,
};
use munu_core::splitting::{characterize, s_beta_zero_check, Characterization, SplitOptions, SplitVerdict};
use munu_core::system::{make_planted, scalar_example, LinearSystem, PlantedModel, PlantedSpec, SystemFile};
use munu_core::Error;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    ConfigError, GammaSpec, InputSpec, NuSpec, ProjectionSource, RateSpec, ScenarioConfig, ScenarioName, SweepAxis,
    SystemSource, TableEntry, WindowSpec,
};
use crate::output::Table;

/// Why a scenario stopped before producing results.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Analysis(Error),
    /// β at or beyond an end of the admissible range.
    BetaOutOfRange(String),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        if e.is_analysis_failure() {
            RunError::Analysis(e)
        } else {
            RunError::Config(ConfigError::new("", e.to_string()))
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl RunError {
    fn code_and_message(&self) -> (String, String) {
        match self {
            RunError::Config(e) => ("invalid_input".into(), e.to_string()),
            RunError::Analysis(e) => (e.code().into(), e.to_string()),
            RunError::BetaOutOfRange(m) => ("beta_out_of_range".into(), m.clone()),
        }
    }
}

type Run<T> = std::result::Result<T, RunError>;

pub struct Outcome {
    pub results: Value,
    pub tables: Vec<Table>,
    pub pass: bool,
}

struct Model {
    rate: GrowthRate,
    nu: NuSequence,
    system: LinearSystem,
    planted: Option<PlantedModel>,
    worked_example: bool,
}

/// The system, rate and ν on the window where the projections live.
struct Resolved {
    rate: GrowthRate,
    nu: NuSequence,
    system: LinearSystem,
    projections: ProjectionFamily,
    source: &'static str,
    characterization: Option<Characterization>,
}

impl Resolved {
    fn window(&self) -> Window {
        self.system.window()
    }

    /// Complement used for one-sided uniqueness and unstable subspaces.
    fn z_basis(&self) -> Option<DMatrix<f64>> {
        (self.system.domain() == Domain::OneSided).then(|| self.projections.kernel_basis(self.window().min).clone())
    }
}

struct Certified {
    certificate: DichotomyCertificate,
    source: &'static str,
    fit: Option<CertificateFit>,
}

fn window_of(w: WindowSpec) -> Run<Window> {
    Ok(Window::new(w.min, w.max)?)
}

fn pairs(entries: &[TableEntry]) -> Vec<(i64, f64)> {
    entries.iter().map(|e| (e.index, e.log_value)).collect()
}

/// `[min, min + len]` one-sided, centered at 0 two-sided.
fn resized(w: Window, domain: Domain, len: i64) -> Run<Window> {
    Ok(match domain {
        Domain::OneSided => Window::new(w.min, w.min + len)?,
        Domain::TwoSided => Window::new(-(len / 2), len - len / 2)?,
    })
}

fn build_rate(spec: &RateSpec, window_len: Option<i64>) -> Run<GrowthRate> {
    let analytic = |kind, domain: &Domain, w: &WindowSpec| -> Run<GrowthRate> {
        let mut window = window_of(*w)?;
        if let Some(len) = window_len {
            window = resized(window, *domain, len)?;
        }
        Ok(GrowthRate::new(kind, *domain, window)?)
    };
    match spec {
        RateSpec::Exponential { domain, window } => analytic(RateKind::Exponential, domain, window),
        RateSpec::Polynomial { domain, window } => analytic(RateKind::Polynomial, domain, window),
        RateSpec::Logarithmic { domain, window } => analytic(RateKind::Logarithmic, domain, window),
        RateSpec::DoublyExponential { domain, window } => analytic(RateKind::DoublyExponential, domain, window),
        RateSpec::Table { domain, entries } => Ok(GrowthRate::from_table(*domain, &pairs(entries))?),
    }
}

fn build_nu(spec: &NuSpec, rate: &GrowthRate) -> Run<NuSequence> {
    Ok(match spec {
        NuSpec::Ones => NuSequence::ones(rate.window),
        NuSpec::Uniform { log_c } => NuSequence::uniform(rate.window, *log_c)?,
        NuSpec::Power { epsilon } => NuSequence::power(rate, *epsilon)?,
        NuSpec::Table { entries } => NuSequence::from_table(&pairs(entries))?,
    })
}

fn read_system_file(path: &Path) -> Run<LinearSystem> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("system.path", format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: SystemFile = serde_path_to_error::deserialize(de).map_err(|e| {
        ConfigError::new(
            format!("system.path ({}) {}", path.display(), e.path()),
            e.into_inner().to_string(),
        )
    })?;
    Ok(file.into_system()?)
}

fn build_model(cfg: &ScenarioConfig, base_dir: &Path, window_len: Option<i64>) -> Run<Model> {
    let source = cfg
        .system
        .as_ref()
        .ok_or_else(|| ConfigError::new("system", "required by this scenario"))?;
    if let SystemSource::ScalarExample { window } = source {
        let mut w = window_of(*window)?;
        if let Some(len) = window_len {
            w = resized(w, Domain::OneSided, len)?;
        }
        let (rate, system) = scalar_example(w)?;
        let nu = build_nu(&cfg.nu, &rate)?;
        return Ok(Model {
            rate,
            nu,
            system,
            planted: None,
            worked_example: true,
        });
    }
    let rate_spec = cfg
        .rate
        .as_ref()
        .ok_or_else(|| ConfigError::new("rate", "required for this system source"))?;
    let rate = build_rate(rate_spec, window_len)?;
    let nu = build_nu(&cfg.nu, &rate)?;
    let (system, planted) = match source {
        SystemSource::Inline { system } => (system.clone().into_system()?, None),
        SystemSource::File { path } => (read_system_file(&base_dir.join(path))?, None),
        SystemSource::Planted {
            exponents,
            similarity_cond,
            vary_similarity,
            seed,
        } => {
            let spec = PlantedSpec {
                exponents: exponents.clone(),
                similarity_cond: *similarity_cond,
                vary_similarity: *vary_similarity,
                seed: *seed,
            };
            let pm = make_planted(&rate, &nu, &spec)?;
            (pm.system.clone(), Some(pm))
        }
        SystemSource::ScalarExample { .. } => unreachable!("handled above"),
    };
    if system.domain() != rate.domain {
        return Err(ConfigError::new("rate.domain", "does not match the system's domain").into());
    }
    Ok(Model {
        rate,
        nu,
        system,
        planted,
        worked_example: false,
    })
}

fn split_options(cfg: &ScenarioConfig) -> SplitOptions {
    let d = SplitOptions::default();
    let t = &cfg.tolerances;
    SplitOptions {
        gap_threshold: t.gap_threshold.unwrap_or(d.gap_threshold),
        cutoff: t.cutoff.unwrap_or(d.cutoff),
        horizon: t.horizon.unwrap_or(d.horizon),
        resolution: t.resolution.unwrap_or(d.resolution),
        max_condition: t.max_condition.unwrap_or(d.max_condition),
    }
}

fn verify_options(cfg: &ScenarioConfig, keep_grid: bool) -> VerifyOptions {
    let d = VerifyOptions::default();
    VerifyOptions {
        structural_tol: cfg.tolerances.structural_tol.unwrap_or(d.structural_tol),
        slack_tol: cfg.tolerances.slack_tol.unwrap_or(d.slack_tol),
        keep_grid,
    }
}

fn planted_z(model: &Model) -> Option<DMatrix<f64>> {
    match (&model.planted, model.rate.domain) {
        (Some(pm), Domain::OneSided) => Some(pm.projections.kernel_basis(model.system.window().min).clone()),
        _ => None,
    }
}

fn resolve(cfg: &ScenarioConfig, model: &Model) -> Run<Resolved> {
    let w = model.system.window();
    let d = model.system.dim();
    let plain = |projections, source| Resolved {
        rate: model.rate.clone(),
        nu: model.nu.clone(),
        system: model.system.clone(),
        projections,
        source,
        characterization: None,
    };
    let source = match &cfg.projections {
        ProjectionSource::Auto if model.planted.is_some() => "planted",
        ProjectionSource::Auto if model.worked_example => "identity",
        ProjectionSource::Auto => "characterize",
        ProjectionSource::Identity => "identity",
        ProjectionSource::Planted => "planted",
        ProjectionSource::Characterize => "characterize",
        ProjectionSource::Inline { .. } => "inline",
    };
    match source {
        "identity" => Ok(plain(ProjectionFamily::identity(w, d), source)),
        "planted" => {
            let pm = model
                .planted
                .as_ref()
                .ok_or_else(|| ConfigError::new("projections.source", "planted projections need a planted system"))?;
            Ok(plain(pm.projections.clone(), source))
        }
        "inline" => {
            let ProjectionSource::Inline { matrices } = &cfg.projections else {
                unreachable!()
            };
            let mut m = matrices.clone();
            m.sort_by_key(|e| e.n);
            if m.iter().map(|e| e.n).ne(w.indices()) {
                return Err(ConfigError::new(
                    "projections.matrices",
                    format!("need exactly one matrix for each n in [{}, {}]", w.min, w.max),
                )
                .into());
            }
            let mats = m
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let r = e.rows.len();
                    let c = e.rows.first().map_or(0, Vec::len);
                    if e.rows.iter().any(|row| row.len() != c) {
                        return Err(ConfigError::new(
                            format!("projections.matrices[{i}].rows"),
                            "ragged rows",
                        ));
                    }
                    Ok(DMatrix::from_fn(r, c, |a, b| e.rows[a][b]))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(plain(ProjectionFamily::new(w, mats)?, source))
        }
        _ => {
            let z = planted_z(model);
            let c = characterize(&model.system, &model.rate, &model.nu, z.as_ref(), &split_options(cfg))?;
            let cw = c.splitting.window;
            Ok(Resolved {
                rate: model.rate.restrict(cw)?,
                nu: model.nu.restrict(cw)?,
                system: c.system.clone(),
                projections: c.projections.clone(),
                source,
                characterization: Some(c),
            })
        }
    }
}

fn certify(cfg: &ScenarioConfig, r: &Resolved) -> Run<Certified> {
    if let Some(c) = cfg.certificate {
        return Ok(Certified {
            certificate: c.into(),
            source: "config",
            fit: None,
        });
    }
    if let Some(c) = &r.characterization {
        return Ok(Certified {
            certificate: c.certificate,
            source: "fitted",
            fit: Some(c.fit.clone()),
        });
    }
    let fit = fit_certificate(&r.system, &r.projections, &r.rate, &r.nu)?;
    Ok(Certified {
        certificate: fit.certificate,
        source: "fitted",
        fit: Some(fit),
    })
}

/// Admissible β interval; an empty one from fitted data is an analysis
/// result, from the config a configuration error.
fn admissible_range(cert: &Certified, domain: Domain) -> Run<BetaRange> {
    beta_range(&cert.certificate, domain).map_err(|e| match cert.source {
        "config" => RunError::Config(ConfigError::new("certificate", e.to_string())),
        _ => RunError::Analysis(e),
    })
}

pub fn run_scenario(scenario: ScenarioName, cfg: &ScenarioConfig, base_dir: &Path) -> Run<Outcome> {
    match scenario {
        ScenarioName::Verify => verify(cfg, base_dir),
        ScenarioName::Characterize => characterize_scenario(cfg, base_dir),
        ScenarioName::Admissibility => admissibility(cfg, base_dir),
        ScenarioName::Perturb => perturb(cfg, base_dir),
        ScenarioName::Counterexample => counterexample(cfg),
        ScenarioName::Sweep => sweep(cfg, base_dir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub side: Side,
    pub lag: i64,
    #[serde(with = "munu_core::serde_f64")]
    pub max_slack: f64,
}

fn verify(cfg: &ScenarioConfig, base_dir: &Path) -> Run<Outcome> {
    let model = build_model(cfg, base_dir, None)?;
    let r = resolve(cfg, &model)?;
    let cert = certify(cfg, &r)?;
    let mut rep = verify_dichotomy(
        &r.system,
        &r.projections,
        &r.rate,
        &r.nu,
        &cert.certificate,
        &verify_options(cfg, true),
    )?;
    let mut by_lag: BTreeMap<(u8, i64), f64> = BTreeMap::new();
    for s in rep.grid.take().unwrap_or_default() {
        let side = match s.side {
            Side::Stable => 0,
            Side::Unstable => 1,
        };
        let e = by_lag.entry((side, (s.m - s.n).abs())).or_insert(f64::NEG_INFINITY);
        if s.slack > *e || s.slack.is_nan() {
            *e = s.slack;
        }
    }
    let lags: Vec<LagRow> = by_lag
        .into_iter()
        .map(|((side, lag), max_slack)| LagRow {
            side: if side == 0 { Side::Stable } else { Side::Unstable },
            lag,
            max_slack,
        })
        .collect();
    let results = json!({
        "window": r.window(),
        "projections": r.source,
        "certificate_source": cert.source,
        "certificate": cert.certificate,
        "fit": cert.fit,
        "report": rep,
        "slack_by_lag": lags,
    });
    Ok(Outcome {
        pass: rep.pass,
        tables: vec![table("verify_index", &rep.per_index)?, table("slack_by_lag", &lags)?],
        results,
    })
}

fn table<T: Serialize>(name: &str, rows: &[T]) -> Run<Table> {
    Table::from_rows(name, rows).map_err(|e| RunError::Config(ConfigError::new("", e.to_string())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SBetaRow {
    pub beta: f64,
    pub status: String,
    pub equal: Option<bool>,
    pub max_angle: Option<f64>,
    pub dim_s0: Option<usize>,
    pub dim_s_beta: Option<usize>,
}

fn characterize_scenario(cfg: &ScenarioConfig, base_dir: &Path) -> Run<Outcome> {
    let model = build_model(cfg, base_dir, None)?;
    let z = planted_z(&model);
    let opts = split_options(cfg);
    let c = characterize(&model.system, &model.rate, &model.nu, z.as_ref(), &opts)?;
    let s_rows: Vec<SBetaRow> = if model.rate.domain == Domain::OneSided {
        cfg.betas
            .iter()
            .map(
                |&beta| match s_beta_zero_check(&model.system, &model.rate, beta, &opts) {
                    Ok(s) => SBetaRow {
                        beta,
                        status: "ok".into(),
                        equal: Some(s.equal),
                        max_angle: Some(s.angles.iter().copied().fold(0.0, f64::max)),
                        dim_s0: Some(s.basis_s0.dim()),
                        dim_s_beta: Some(s.basis_s_beta.dim()),
                    },
                    Err(e) => SBetaRow {
                        beta,
                        status: e.code().into(),
                        equal: None,
                        max_angle: None,
                        dim_s0: None,
                        dim_s_beta: None,
                    },
                },
            )
            .collect()
    } else {
        Vec::new()
    };
    let sp = &c.splitting;
    let exponents = sp.stable.first().map(|b| b.all_exponents.clone()).unwrap_or_default();
    let mut verify = c.verify.clone();
    verify.grid = None;
    let results = json!({
        "full_window": sp.full_window,
        "window": sp.window,
        "certificate": c.certificate,
        "fit": c.fit,
        "splitting": {
            "stable_dim": sp.stable_dim,
            "unstable_dim": sp.unstable_dim,
            "gap": finite_or_str(sp.gap),
            "gap_stable": finite_or_str(sp.gap_stable),
            "gap_unstable": sp.gap_unstable.map(finite_or_str),
            "min_angle": sp.min_angle,
            "exponents_at_start": exponents,
            "verdict": sp.verdict,
        },
        "verify": verify,
        "green": c.green,
        "s_beta_checks": s_rows,
    });
    let mut tables = vec![table("splitting", &sp.per_index)?];
    if !s_rows.is_empty() {
        tables.push(table("s_beta", &s_rows)?);
    }
    Ok(Outcome {
        pass: sp.verdict == SplitVerdict::Pass && c.verify.pass,
        tables,
        results,
    })
}

fn finite_or_str(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(crate::output::fmt_f64(x))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdmissibilityRow {
    pub beta: f64,
    pub seed: u64,
    pub window_min: Option<i64>,
    pub window_max: Option<i64>,
    pub status: String,
    pub message: String,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub d_hat: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub input_norm: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub solution_norm: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub bound_ratio: Option<f64>,
    pub bound_holds: Option<bool>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub max_residual: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub oracle_rel_error: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub t_exact_sup: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub t_sampled_lb: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub t_impulse_lb: Option<f64>,
    pub t_argmax_m: Option<i64>,
    pub t_argmax_k: Option<i64>,
    pub uniqueness: Option<UniquenessVerdict>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub abs_input_norm: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub abs_solution_norm: Option<f64>,
}

impl AdmissibilityRow {
    fn failed(beta: f64, seed: u64, e: &RunError) -> Self {
        let (status, message) = e.code_and_message();
        AdmissibilityRow {
            beta,
            seed,
            status,
            message,
            ..Default::default()
        }
    }

    fn ok(&self, cfg: &ScenarioConfig) -> bool {
        let t = &cfg.tolerances;
        self.status == "ok"
            && self.bound_holds == Some(true)
            && self.max_residual.is_some_and(|r| r <= t.residual_tol.unwrap_or(1e-10))
            && self.oracle_rel_error.is_some_and(|r| r <= t.oracle_tol.unwrap_or(1e-8))
    }
}

fn build_input(cfg: &ScenarioConfig, model_window: Window, r: &Resolved, beta: f64, seed: u64) -> Run<Sequence> {
    let w = r.window();
    let d = r.system.dim();
    match &cfg.input {
        InputSpec::Random => Ok(random_input(&r.rate, &r.nu, beta, d, seed)?),
        InputSpec::Impulse { n, vector } => {
            if vector.len() != d {
                return Err(ConfigError::new(
                    "input.vector",
                    format!("length {} but the system has dimension {d}", vector.len()),
                )
                .into());
            }
            if !w.contains(*n) {
                return Err(ConfigError::new(
                    "input.n",
                    format!("{n} lies outside the analysis window [{}, {}]", w.min, w.max),
                )
                .into());
            }
            let mut y = vec![DVector::zeros(d); w.len()];
            y[w.offset(*n)] = DVector::from_column_slice(vector);
            Ok(y)
        }
        InputSpec::Inline { values } => {
            if values.len() != model_window.len() {
                return Err(ConfigError::new(
                    "input.values",
                    format!(
                        "{} vectors for a window of {} indices",
                        values.len(),
                        model_window.len()
                    ),
                )
                .into());
            }
            if let Some(i) = values.iter().position(|v| v.len() != d) {
                return Err(ConfigError::new(format!("input.values[{i}]"), format!("expected length {d}")).into());
            }
            Ok(w.indices()
                .map(|n| DVector::from_column_slice(&values[model_window.offset(n)]))
                .collect())
        }
    }
}

struct AdmContext<'a> {
    cfg: &'a ScenarioConfig,
    model_window: Window,
    resolved: &'a Resolved,
    cert: &'a Certified,
    range: BetaRange,
}

fn admissibility_point(ctx: &AdmContext, beta: f64, seed: u64) -> AdmissibilityRow {
    let run = || -> Run<AdmissibilityRow> {
        let r = ctx.resolved;
        if !ctx.range.contains(beta) {
            return Err(RunError::BetaOutOfRange(format!(
                "{beta} lies outside the admissible range ({}, {})",
                ctx.range.lo, ctx.range.hi
            )));
        }
        let y = build_input(ctx.cfg, ctx.model_window, r, beta, seed)?;
        let bnd = Boundary::from_projections(&r.system, &r.projections);
        let rep = solve_admissibility(&r.system, &r.projections, &y, beta, &r.rate, &r.nu, &bnd)?;
        let x: Sequence = rep.solution.iter().map(|v| DVector::from_vec(v.clone())).collect();
        let oracle = oracle_solve_weighted(&r.system, &r.projections, &y, &bnd, Some((&r.rate, beta)))?;
        let err = weighted_relative_error(&x, &oracle, &r.rate, beta)?;
        let t = operator_norm_t(&r.system, &r.projections, &r.rate, &r.nu, beta, ctx.cfg.samples, seed)?;
        let uniqueness = match r.z_basis() {
            Some(z) => Some(uniqueness_probe(&r.system, &r.rate, beta, &z, None, Some(&ctx.cert.certificate))?.verdict),
            None => None,
        };
        let d = ctx.cert.certificate.d;
        let ratio = if rep.input_norm_1beta == 0.0 {
            0.0
        } else {
            rep.solution_norm_inf_beta / (d * rep.input_norm_1beta)
        };
        let w = r.window();
        Ok(AdmissibilityRow {
            beta,
            seed,
            window_min: Some(w.min),
            window_max: Some(w.max),
            status: "ok".into(),
            message: String::new(),
            d_hat: Some(d),
            input_norm: Some(rep.input_norm_1beta),
            solution_norm: Some(rep.solution_norm_inf_beta),
            bound_ratio: Some(ratio),
            bound_holds: Some(ratio <= 1.0 + ctx.cfg.tolerances.bound_tol.unwrap_or(1e-6)),
            max_residual: Some(rep.max_residual),
            oracle_rel_error: Some(err),
            t_exact_sup: Some(t.exact_sup),
            t_sampled_lb: Some(t.sampled_lb),
            t_impulse_lb: Some(t.impulse_lb),
            t_argmax_m: Some(t.argmax.0),
            t_argmax_k: Some(t.argmax.1),
            uniqueness,
            abs_input_norm: rep.abs_norms.map(|a| a.input_norm),
            abs_solution_norm: rep.abs_norms.map(|a| a.solution_norm),
        })
    };
    run().unwrap_or_else(|e| AdmissibilityRow::failed(beta, seed, &e))
}

fn default_beta(cfg: &ScenarioConfig, range: &BetaRange) -> f64 {
    cfg.betas.first().copied().unwrap_or_else(|| range.interior(0.5))
}

fn admissibility(cfg: &ScenarioConfig, base_dir: &Path) -> Run<Outcome> {
    let model = build_model(cfg, base_dir, None)?;
    let r = resolve(cfg, &model)?;
    let cert = certify(cfg, &r)?;
    let range = admissible_range(&cert, r.system.domain())?;
    let betas = if cfg.betas.is_empty() {
        vec![range.interior(0.5)]
    } else {
        cfg.betas.clone()
    };
    if cert.source == "config" {
        if let Some(i) = betas.iter().position(|b| !range.contains(*b)) {
            return Err(ConfigError::new(
                format!("betas[{i}]"),
                format!(
                    "outside the admissible range ({}, {}) of the supplied certificate",
                    range.lo, range.hi
                ),
            )
            .into());
        }
    }
    let ctx = AdmContext {
        cfg,
        model_window: model.system.window(),
        resolved: &r,
        cert: &cert,
        range,
    };
    let rows: Vec<AdmissibilityRow> = betas
        .par_iter()
        .map(|&b| admissibility_point(&ctx, b, cfg.seed))
        .collect();
    if let Some(row) = rows.iter().find(|row| row.status == "invalid_input") {
        return Err(ConfigError::new("", row.message.clone()).into());
    }
    let mut solution = Table::new("solution", &["beta", "n"]);
    let d = r.system.dim();
    solution.header.extend((0..d).map(|i| format!("x{i}")));
    for row in rows.iter().filter(|row| row.status == "ok") {
        let y = build_input(cfg, ctx.model_window, &r, row.beta, cfg.seed)?;
        let bnd = Boundary::from_projections(&r.system, &r.projections);
        let rep = solve_admissibility(&r.system, &r.projections, &y, row.beta, &r.rate, &r.nu, &bnd)?;
        for (n, x) in r.window().indices().zip(&rep.solution) {
            let mut line = vec![crate::output::fmt_f64(row.beta), n.to_string()];
            line.extend(x.iter().map(|v| crate::output::fmt_f64(*v)));
            solution.push(line);
        }
    }
    let pass = rows.iter().all(|row| row.ok(cfg));
    let results = json!({
        "window": r.window(),
        "projections": r.source,
        "certificate_source": cert.source,
        "certificate": cert.certificate,
        "fit": cert.fit,
        "beta_range": range,
        "rows": rows,
    });
    Ok(Outcome {
        pass,
        tables: vec![table("admissibility", &rows)?, solution],
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbRow {
    pub c: f64,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub beta: Option<f64>,
    pub seed: u64,
    pub window_min: Option<i64>,
    pub window_max: Option<i64>,
    pub status: String,
    pub message: String,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub gamma_sum: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub t_norm: Option<f64>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub margin: Option<f64>,
    pub predicted_persistence: Option<bool>,
    pub neumann_converged: Option<bool>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub neumann_relative_error: Option<f64>,
    pub verdict: Option<PersistenceVerdict>,
    #[serde(default, with = "munu_core::serde_f64::opt")]
    pub max_drift: Option<f64>,
    pub perturbed_failure: String,
}

fn gamma_of(g: &GammaSpec) -> Gamma {
    match g {
        GammaSpec::Geometric { ratio } => Gamma::Geometric { ratio: *ratio },
        GammaSpec::Table { values } => Gamma::Table {
            values: values.iter().map(|e| (e.index, e.value)).collect(),
        },
    }
}

struct PerturbContext<'a> {
    cfg: &'a ScenarioConfig,
    resolved: &'a Resolved,
    cert: &'a Certified,
    range: BetaRange,
}

fn perturb_beta(ctx: &PerturbContext, beta: Option<f64>) -> f64 {
    let pc = ctx.cfg.perturbation.as_ref().expect("validated");
    beta.or(pc.beta).unwrap_or_else(|| default_beta(ctx.cfg, &ctx.range))
}

fn perturb_run(ctx: &PerturbContext, c: f64, beta: f64, seed: u64) -> Run<(PerturbRow, PersistenceReport)> {
    let pc = ctx.cfg.perturbation.as_ref().expect("validated");
    let r = ctx.resolved;
    let spec = PerturbationSpec {
        gamma: gamma_of(&pc.gamma),
        c,
        seed,
        beta,
        variant: NormVariant::Plain,
    };
    let p = make_perturbation(&r.system, &r.rate, &r.nu, &spec, Some(&ctx.cert.certificate))?;
    let margin = smallness_margin(
        &r.system,
        &r.projections,
        &r.rate,
        &r.nu,
        &spec,
        pc.neumann.then_some(&p),
    )?;
    let z = r.z_basis();
    let rep = verify_persistence(
        &r.system,
        &p.matrices,
        &r.rate,
        &r.nu,
        z.as_ref(),
        Some(margin),
        &split_options(ctx.cfg),
    )?;
    let w = r.window();
    let row = PerturbRow {
        c,
        beta: Some(beta),
        seed,
        window_min: Some(w.min),
        window_max: Some(w.max),
        status: "ok".into(),
        message: String::new(),
        gamma_sum: Some(margin.gamma_sum),
        t_norm: Some(margin.t_norm),
        margin: Some(margin.margin),
        predicted_persistence: Some(margin.predicted_persistence),
        neumann_converged: margin.neumann.map(|n| n.converged),
        neumann_relative_error: margin.neumann.map(|n| n.relative_error),
        verdict: Some(rep.verdict),
        max_drift: Some(rep.max_drift),
        perturbed_failure: rep.failure.as_ref().map(|f| f.code.clone()).unwrap_or_default(),
    };
    Ok((row, rep))
}

fn perturb_point(ctx: &PerturbContext, c: f64, beta: Option<f64>, seed: u64) -> PerturbRow {
    let beta = perturb_beta(ctx, beta);
    perturb_run(ctx, c, beta, seed).map_or_else(
        |e| {
            let (status, message) = e.code_and_message();
            PerturbRow {
                c,
                beta: Some(beta),
                seed,
                status,
                message,
                ..Default::default()
            }
        },
        |(row, _)| row,
    )
}

fn perturb(cfg: &ScenarioConfig, base_dir: &Path) -> Run<Outcome> {
    let model = build_model(cfg, base_dir, None)?;
    let r = resolve(cfg, &model)?;
    let cert = certify(cfg, &r)?;
    let range = admissible_range(&cert, r.system.domain())?;
    let pc = cfg
        .perturbation
        .as_ref()
        .ok_or_else(|| ConfigError::new("perturbation", "required by this scenario"))?;
    let ctx = PerturbContext {
        cfg,
        resolved: &r,
        cert: &cert,
        range,
    };
    let (row, rep) = perturb_run(&ctx, pc.c, perturb_beta(&ctx, None), cfg.seed)?;
    let pass = rep.verdict == PersistenceVerdict::Persisted;
    let drift: Vec<DriftRow> = rep.drift.clone();
    let results = json!({
        "window": r.window(),
        "projections": r.source,
        "certificate_source": cert.source,
        "certificate": cert.certificate,
        "fit": cert.fit,
        "beta_range": range,
        "row": row,
        "persistence": rep,
    });
    Ok(Outcome {
        pass,
        tables: vec![table("perturb", std::slice::from_ref(&row))?, table("drift", &drift)?],
        results,
    })
}

fn counterexample(cfg: &ScenarioConfig) -> Run<Outcome> {
    let n_max = cfg.counterexample.map_or(10, |c| c.n_max);
    let t = run_counterexample(n_max)?;
    Ok(Outcome {
        pass: t.all_hold,
        tables: vec![table("counterexample", &t.rows)?],
        results: json!(t),
    })
}

fn sweep(cfg: &ScenarioConfig, base_dir: &Path) -> Run<Outcome> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::new("sweep", "required by this scenario"))?;
    let (rows_json, table_out, failed) = match s.base {
        ScenarioName::Admissibility => {
            let rows = sweep_admissibility(cfg, base_dir, s.axis, &s.values)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            (
                serde_json::to_value(&rows).expect("rows serialize"),
                table("sweep", &rows)?,
                failed,
            )
        }
        ScenarioName::Perturb => {
            let rows = sweep_perturb(cfg, base_dir, s.axis, &s.values)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            (
                serde_json::to_value(&rows).expect("rows serialize"),
                table("sweep", &rows)?,
                failed,
            )
        }
        _ => return Err(ConfigError::new("sweep.base", "must be admissibility or perturb").into()),
    };
    let results = json!({
        "base": s.base,
        "axis": s.axis,
        "points": s.values.len(),
        "failed_points": failed,
        "rows": rows_json,
    });
    Ok(Outcome {
        pass: true,
        tables: vec![table_out],
        results,
    })
}

/// Model, projections and certificate for one sweep point.
fn prepared(
    cfg: &ScenarioConfig,
    base_dir: &Path,
    window_len: Option<i64>,
) -> Run<(Window, Resolved, Certified, BetaRange)> {
    let model = build_model(cfg, base_dir, window_len)?;
    let r = resolve(cfg, &model)?;
    let cert = certify(cfg, &r)?;
    let range = admissible_range(&cert, r.system.domain())?;
    Ok((model.system.window(), r, cert, range))
}

fn sweep_admissibility(
    cfg: &ScenarioConfig,
    base_dir: &Path,
    axis: SweepAxis,
    values: &[f64],
) -> Run<Vec<AdmissibilityRow>> {
    if axis == SweepAxis::WindowLength {
        return Ok(values
            .par_iter()
            .map(|&len| match prepared(cfg, base_dir, Some(len as i64)) {
                Ok((mw, r, cert, range)) => {
                    let ctx = AdmContext {
                        cfg,
                        model_window: mw,
                        resolved: &r,
                        cert: &cert,
                        range,
                    };
                    admissibility_point(&ctx, default_beta(cfg, &range), cfg.seed)
                }
                Err(e) => AdmissibilityRow::failed(f64::NAN, cfg.seed, &e),
            })
            .collect());
    }
    let (mw, r, cert, range) = prepared(cfg, base_dir, None)?;
    let ctx = AdmContext {
        cfg,
        model_window: mw,
        resolved: &r,
        cert: &cert,
        range,
    };
    Ok(values
        .par_iter()
        .map(|&v| match axis {
            SweepAxis::Beta => admissibility_point(&ctx, v, cfg.seed),
            _ => admissibility_point(&ctx, default_beta(cfg, &range), v as u64),
        })
        .collect())
}

fn sweep_perturb(cfg: &ScenarioConfig, base_dir: &Path, axis: SweepAxis, values: &[f64]) -> Run<Vec<PerturbRow>> {
    let c0 = cfg.perturbation.as_ref().map_or(0.0, |p| p.c);
    if axis == SweepAxis::WindowLength {
        return Ok(values
            .par_iter()
            .map(|&len| match prepared(cfg, base_dir, Some(len as i64)) {
                Ok((_, r, cert, range)) => {
                    let ctx = PerturbContext {
                        cfg,
                        resolved: &r,
                        cert: &cert,
                        range,
                    };
                    perturb_point(&ctx, c0, None, cfg.seed)
                }
                Err(e) => {
                    let (status, message) = e.code_and_message();
                    PerturbRow {
                        c: c0,
                        seed: cfg.seed,
                        status,
                        message,
                        ..Default::default()
                    }
                }
            })
            .collect());
    }
    let (_, r, cert, range) = prepared(cfg, base_dir, None)?;
    let ctx = PerturbContext {
        cfg,
        resolved: &r,
        cert: &cert,
        range,
    };
    Ok(values
        .par_iter()
        .map(|&v| match axis {
            SweepAxis::C => perturb_point(&ctx, v, None, cfg.seed),
            SweepAxis::Beta => perturb_point(&ctx, c0, Some(v), cfg.seed),
            _ => perturb_point(&ctx, c0, None, v as u64),
        })
        .collect())
}
