//! Saturating perturbations `B_n`, the graph-norm operators `𝐀_β`, `𝐁_β`,
//! the smallness margin and end-to-end persistence checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admissibility::{operator_norm_t, oracle_solve_weighted, weighted_relative_error, Boundary};
use crate::cocycle::ProjectedCocycle;
use crate::dichotomy::{beta_range, DichotomyCertificate, ProjectionFamily};
use crate::error::{invalid, Error, Result, Stage};
use crate::linalg::{random_orthogonal, subspace_distance, ScaledMatrix};
use crate::logspace::{exp_or_inf, log_sum_exp, Dd};
use crate::rates::{log_norm, Domain, GrowthRate, NormP, NormVariant, NuSequence, Sequence, WeightedNormSpec, Window};
use crate::splitting::{characterize, Characterization, SplitOptions};
use crate::system::LinearSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gamma {
    /// `γ_n = ratio^{|n|}`.
    Geometric { ratio: f64 },
    /// `(n, γ_n)` pairs.
    Table { values: Vec<(i64, f64)> },
}

impl Gamma {
    pub fn halving() -> Self {
        Gamma::Geometric { ratio: 0.5 }
    }

    /// `γ_n` for `n ∈ [N_min, N_max − 1]`.
    pub fn values(&self, window: Window) -> Result<Vec<f64>> {
        let idx = window.min..window.max;
        let out: Vec<f64> = match self {
            Gamma::Geometric { ratio } => {
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(invalid(format!("gamma ratio must lie in (0, 1), got {ratio}")));
                }
                idx.map(|n| ratio.powi(n.unsigned_abs().min(i32::MAX as u64) as i32))
                    .collect()
            }
            Gamma::Table { values } => idx
                .map(|n| {
                    values
                        .iter()
                        .find(|(k, _)| *k == n)
                        .map(|(_, g)| *g)
                        .ok_or_else(|| Error::Range(format!("gamma table has no entry for {n}")))
                })
                .collect::<Result<_>>()?,
        };
        if let Some(g) = out.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(invalid(format!("gamma values must be positive and finite, got {g}")));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub gamma: Gamma,
    pub c: f64,
    pub seed: u64,
    pub beta: f64,
    /// Weight variant; `Abs` uses the two-sided `|·|` exponents.
    #[serde(default = "plain")]
    pub variant: NormVariant,
}

fn plain() -> NormVariant {
    NormVariant::Plain
}

impl PerturbationSpec {
    pub fn new(c: f64, beta: f64, seed: u64) -> Self {
        PerturbationSpec {
            gamma: Gamma::halving(),
            c,
            seed,
            beta,
            variant: NormVariant::Plain,
        }
    }

    fn weights(&self) -> WeightedNormSpec {
        WeightedNormSpec {
            beta: self.beta,
            p: NormP::One,
            variant: self.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// `B_n` for `n ∈ [N_min, N_max − 1]`.
    pub matrices: Vec<ScaledMatrix>,
    /// `ln ρ_n`, the prescribed norm of each `B_n`.
    pub log_rho: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_sum: f64,
}

/// `B_n = ρ_n Q_n` with `Q_n` seeded random orthogonal and
/// `ρ_n = cγ_n μ_n^β / (ν_{n+1} μ_{n+1}^β)`.
pub fn make_perturbation(
    sys: &LinearSystem,
    rate: &GrowthRate,
    nu: &NuSequence,
    spec: &PerturbationSpec,
    cert: Option<&DichotomyCertificate>,
) -> Result<Perturbation> {
    if !(spec.c >= 0.0 && spec.c.is_finite()) {
        return Err(invalid(format!("c must be finite and non-negative, got {}", spec.c)));
    }
    if !spec.beta.is_finite() {
        return Err(invalid("beta must be finite"));
    }
    if let Some(cert) = cert {
        let r = beta_range(cert, sys.domain())?;
        if !r.contains(spec.beta) {
            return Err(invalid(format!(
                "beta {} outside the admissible range ({}, {})",
                spec.beta, r.lo, r.hi
            )));
        }
    }
    let w = sys.window();
    let rate = rate.restrict(w)?;
    let nu = nu.restrict(w)?;
    let gamma = spec.gamma.values(w)?;
    let gamma_sum = gamma.iter().sum();
    let weights = spec.weights();
    let d = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut matrices = Vec::with_capacity(gamma.len());
    let mut log_rho = Vec::with_capacity(gamma.len());
    for (i, n) in (w.min..w.max).enumerate() {
        let q = random_orthogonal(d, &mut rng);
        if spec.c == 0.0 {
            matrices.push(ScaledMatrix::zeros(d, d));
            log_rho.push(f64::NEG_INFINITY);
            continue;
        }
        let lr = Dd::new(spec.c.ln()) + Dd::new(gamma[i].ln()) + Dd::new(rate.log_mu(n)).mul_f64(weights.exponent(n))
            - Dd::new(rate.log_mu(n + 1)).mul_f64(weights.exponent(n + 1))
            - Dd::new(nu.log_nu(n + 1));
        log_rho.push(lr.to_f64());
        matrices.push(ScaledMatrix::new(lr, q));
    }
    Ok(Perturbation {
        matrices,
        log_rho,
        gamma,
        gamma_sum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    ABeta,
    BBeta,
}

pub struct GraphNormOperator<'a> {
    pub sys: &'a LinearSystem,
    pub perturbation: Option<&'a [ScaledMatrix]>,
    pub mode: GraphMode,
}

impl<'a> GraphNormOperator<'a> {
    pub fn a_beta(sys: &'a LinearSystem) -> Self {
        GraphNormOperator {
            sys,
            perturbation: None,
            mode: GraphMode::ABeta,
        }
    }

    pub fn b_beta(sys: &'a LinearSystem, b: &'a [ScaledMatrix]) -> Self {
        GraphNormOperator {
            sys,
            perturbation: Some(b),
            mode: GraphMode::BBeta,
        }
    }
}

/// `(𝐀x)_n = x_n − A_{n−1}x_{n−1}` or `(𝐁x)_n = B_{n−1}x_{n−1}`, zero at
/// the left end of the window.
pub fn apply_graph_operator(op: &GraphNormOperator<'_>, x: &[DVector<f64>]) -> Result<Sequence> {
    let w = op.sys.window();
    let d = op.sys.dim();
    let got = crate::rates::check_sequence(x, &w)?;
    if got != d {
        return Err(Error::Dimension(format!("vectors have length {got}, expected {d}")));
    }
    let mut out = vec![DVector::zeros(d); w.len()];
    match op.mode {
        GraphMode::ABeta => {
            for n in w.min + 1..=w.max {
                let i = w.offset(n);
                out[i] = &x[i] - apply_scaled(op.sys.matrix(n - 1), &x[i - 1]);
            }
        }
        GraphMode::BBeta => {
            let b = op
                .perturbation
                .ok_or_else(|| invalid("B mode needs perturbation matrices"))?;
            if b.len() + 1 != w.len() {
                return Err(Error::Range(format!(
                    "{} perturbation matrices for a window of {} indices",
                    b.len(),
                    w.len()
                )));
            }
            for n in w.min + 1..=w.max {
                let i = w.offset(n);
                out[i] = apply_scaled(&b[i - 1], &x[i - 1]);
            }
        }
    }
    Ok(out)
}

fn apply_scaled(a: &ScaledMatrix, v: &DVector<f64>) -> DVector<f64> {
    (&a.mat * v) * exp_or_inf(a.log_scale.to_f64())
}

/// `‖x‖_{∞,β} + ‖𝐀_β x‖_{1,β}`.
pub fn graph_norm(
    x: &[DVector<f64>],
    sys: &LinearSystem,
    rate: &GrowthRate,
    nu: &NuSequence,
    beta: f64,
) -> Result<f64> {
    let w = sys.window();
    let rate = rate.restrict(w)?;
    let nu = nu.restrict(w)?;
    let ax = apply_graph_operator(&GraphNormOperator::a_beta(sys), x)?;
    let a = log_norm(x, &WeightedNormSpec::sup(beta), &rate, None)?;
    let b = log_norm(&ax, &WeightedNormSpec::l1(beta), &rate, Some(&nu))?;
    Ok(exp_or_inf(log_sum_exp(&[a, b])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeumannCheck {
    /// Block bound on `‖T𝐁‖` as an operator on `ℓ^∞_β`.
    #[serde(with = "crate::serde_f64")]
    pub q_block: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted sup-norm distance between the Neumann iterate and the
    /// perturbed boundary-value solution, relative to the latter.
    #[serde(with = "crate::serde_f64")]
    pub relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessMargin {
    pub c: f64,
    pub beta: f64,
    pub gamma_sum: f64,
    /// `‖T_β‖` from the exact kernel supremum.
    #[serde(with = "crate::serde_f64")]
    pub t_norm: f64,
    /// `cΣγ·‖T‖·(1 + cΣγ)`.
    #[serde(with = "crate::serde_f64")]
    pub margin: f64,
    pub predicted_persistence: bool,
    pub neumann: Option<NeumannCheck>,
}

/// `c·Σγ·‖T_β‖·(1 + c·Σγ)`; persistence is predicted when it is below 1.
pub fn margin_formula(c: f64, gamma_sum: f64, t_norm: f64) -> f64 {
    let s = c * gamma_sum;
    if s == 0.0 {
        return 0.0;
    }
    s * t_norm * (1.0 + s)
}

/// Smallness margin with a Neumann-series cross-check on the window when
/// `perturbation` is given.
#[allow(clippy::too_many_arguments)]
pub fn smallness_margin(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    nu: &NuSequence,
    spec: &PerturbationSpec,
    perturbation: Option<&Perturbation>,
) -> Result<SmallnessMargin> {
    let gamma_sum: f64 = spec.gamma.values(sys.window())?.iter().sum();
    let t = operator_norm_t(sys, proj, rate, nu, spec.beta, 0, spec.seed)?;
    let margin = margin_formula(spec.c, gamma_sum, t.exact_sup);
    let neumann = match perturbation {
        Some(p) => Some(neumann_check(sys, proj, rate, spec.beta, p, spec.seed)?),
        None => None,
    };
    Ok(SmallnessMargin {
        c: spec.c,
        beta: spec.beta,
        gamma_sum,
        t_norm: t.exact_sup,
        margin,
        predicted_persistence: margin < 1.0,
        neumann,
    })
}

/// Iterates `x ← T(y + 𝐁x)` for a seeded input and compares the limit with
/// the boundary-value solution of the perturbed system.
pub fn neumann_check(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    beta: f64,
    perturbation: &Perturbation,
    seed: u64,
) -> Result<NeumannCheck> {
    let w = sys.window();
    let rate = rate.restrict(w)?;
    let d = sys.dim();
    let b = &perturbation.matrices;
    let cocycle = ProjectedCocycle::new(sys, proj)?;
    cocycle.require_invertible()?;

    let rows: Vec<Vec<Dd>> = (w.min..w.max)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|j| -> Result<Vec<Dd>> {
            let col = cocycle.green_column(j + 1)?;
            let bj = &b[w.offset(j)];
            Ok(w.indices()
                .map(|m| {
                    let gb = col[w.offset(m)].mul(bj);
                    gb.log_norm() + rate.log_ratio(m, j).mul_f64(beta)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let q_block = w
        .indices()
        .map(|m| {
            let terms: Vec<f64> = rows.iter().map(|r| r[w.offset(m)].to_f64()).collect();
            log_sum_exp(&terms)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let q_block = exp_or_inf(q_block);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = if sys.domain() == Domain::OneSided {
        w.min + 1
    } else {
        w.min
    };
    let y: Sequence = w
        .indices()
        .map(|n| {
            if n < first {
                DVector::zeros(d)
            } else {
                let s = (-beta * rate.log_mu(n)).exp();
                DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * s)
            }
        })
        .collect();
    let perturbed = sys.perturbed(b)?;
    let boundary = Boundary::from_projections(sys, proj);
    let reference = oracle_solve_weighted(&perturbed, proj, &y, &boundary, Some((&rate, beta)))?;

    let bop = GraphNormOperator::b_beta(sys, b);
    let mut x = cocycle.apply(&y)?;
    let mut iterations = 0;
    let mut converged = false;
    let sup = WeightedNormSpec::sup(beta);
    while iterations < 500 && q_block < 1.0 {
        let bx = apply_graph_operator(&bop, &x)?;
        let rhs: Sequence = y.iter().zip(&bx).map(|(a, b)| a + b).collect();
        let next = cocycle.apply(&rhs)?;
        iterations += 1;
        let diff: Sequence = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let ld = log_norm(&diff, &sup, &rate, None)?;
        let ln = log_norm(&next, &sup, &rate, None)?;
        x = next;
        if ld == f64::NEG_INFINITY || ld - ln < -34.0 {
            converged = true;
            break;
        }
    }
    let relative_error = weighted_relative_error(&x, &reference, &rate, beta)?;
    Ok(NeumannCheck {
        q_block,
        iterations,
        converged,
        relative_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub certificate: DichotomyCertificate,
    pub window: Window,
    pub stable_dim: usize,
    #[serde(with = "crate::serde_f64")]
    pub gap: f64,
    pub verify_pass: bool,
}

impl CertificateSummary {
    fn of(c: &Characterization) -> Self {
        CertificateSummary {
            certificate: c.certificate,
            window: c.splitting.window,
            stable_dim: c.splitting.stable_dim,
            gap: c.splitting.gap,
            verify_pass: c.verify.pass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub n: i64,
    pub stable: f64,
    pub unstable: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersistenceVerdict {
    Persisted,
    NotPersisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedFailure {
    pub code: String,
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub unperturbed: CertificateSummary,
    pub perturbed: Option<CertificateSummary>,
    pub failure: Option<PerturbedFailure>,
    pub drift: Vec<DriftRow>,
    pub max_drift: f64,
    pub margin: Option<SmallnessMargin>,
    pub verdict: PersistenceVerdict,
}

/// Characterizes `A_n` and `A_n + B_n` and compares the results. Failures on
/// the perturbed side are reported in the verdict; failures on the
/// unperturbed side are errors.
pub fn verify_persistence(
    sys: &LinearSystem,
    b: &[ScaledMatrix],
    rate: &GrowthRate,
    nu: &NuSequence,
    z_hint: Option<&DMatrix<f64>>,
    margin: Option<SmallnessMargin>,
    opts: &SplitOptions,
) -> Result<PersistenceReport> {
    let base = characterize(sys, rate, nu, z_hint, opts)?;
    let perturbed_sys = sys.perturbed(b).map_err(|e| e.at(Stage::Perturbed))?;
    let pert = characterize(&perturbed_sys, rate, nu, z_hint, opts);
    let unperturbed = CertificateSummary::of(&base);
    let (perturbed, failure, drift) = match &pert {
        Ok(p) => {
            let w0 = base.splitting.window;
            let w1 = p.splitting.window;
            let lo = w0.min.max(w1.min);
            let hi = w0.max.min(w1.max);
            let drift = (lo..=hi)
                .map(|n| DriftRow {
                    n,
                    stable: subspace_distance(
                        &base.splitting.stable[w0.offset(n)].basis,
                        &p.splitting.stable[w1.offset(n)].basis,
                    ),
                    unstable: subspace_distance(
                        &base.splitting.unstable[w0.offset(n)].basis,
                        &p.splitting.unstable[w1.offset(n)].basis,
                    ),
                })
                .collect();
            (Some(CertificateSummary::of(p)), None, drift)
        }
        Err(e) => (
            None,
            Some(PerturbedFailure {
                code: e.code().to_string(),
                stage: e.stage(),
                message: e.to_string(),
            }),
            Vec::new(),
        ),
    };
    let max_drift = drift
        .iter()
        .map(|r: &DriftRow| r.stable.max(r.unstable))
        .fold(0.0, f64::max);
    let verdict = match &perturbed {
        Some(p) if p.verify_pass => PersistenceVerdict::Persisted,
        _ => PersistenceVerdict::NotPersisted,
    };
    Ok(PersistenceReport {
        unperturbed,
        perturbed,
        failure,
        drift,
        max_drift,
        margin,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admissibility::solve_admissibility;
    use crate::linalg::spectral_norm;
    use crate::rates::RateKind;
    use crate::system::make_planted_model;
    use approx::assert_relative_eq;

    fn exp_rate(domain: Domain, min: i64, max: i64) -> GrowthRate {
        GrowthRate::new(RateKind::Exponential, domain, Window::new(min, max).unwrap()).unwrap()
    }

    fn scalar(a: f64, w: Window) -> LinearSystem {
        LinearSystem::constant(Domain::OneSided, w, DMatrix::from_element(1, 1, a)).unwrap()
    }

    #[test]
    fn zero_c_gives_zero_perturbation() {
        let rate = exp_rate(Domain::OneSided, 0, 8);
        let sys = scalar(0.5, rate.window);
        let p = make_perturbation(
            &sys,
            &rate,
            &NuSequence::ones(rate.window),
            &PerturbationSpec::new(0.0, 0.3, 1),
            None,
        )
        .unwrap();
        assert!(p.matrices.iter().all(|m| m.is_zero()));
    }

    #[test]
    fn scalar_saturation_formula() {
        let rate = exp_rate(Domain::OneSided, 0, 12);
        let sys = scalar(0.5, rate.window);
        let nu = NuSequence::ones(rate.window);
        let p = make_perturbation(&sys, &rate, &nu, &PerturbationSpec::new(0.1, 0.3, 7), None).unwrap();
        for (n, b) in p.matrices.iter().enumerate() {
            let want = 0.1 * 0.5f64.powi(n as i32) * (-0.3f64).exp();
            let got = spectral_norm(&b.mat) * b.log_scale.to_f64().exp();
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
        assert_relative_eq!(p.gamma_sum, 2.0 * (1.0 - 0.5f64.powi(12)), max_relative = 1e-15);
    }

    #[test]
    fn bounded_ratio_cap() {
        let w = Window::new(0, 20).unwrap();
        let rate = GrowthRate::new(RateKind::Polynomial, Domain::OneSided, w).unwrap();
        let nu = NuSequence::power(&rate, 0.2).unwrap();
        let sys = scalar(0.5, w);
        let (c, beta) = (0.3, 0.4);
        let p = make_perturbation(&sys, &rate, &nu, &PerturbationSpec::new(c, beta, 2), None).unwrap();
        let k = 2.0f64;
        for n in 0..20 {
            assert!(rate.log_mu(n + 1) - rate.log_mu(n) <= k.ln());
            let floor = (c * p.gamma[n as usize]).ln() - beta * k.ln() - nu.log_nu(n + 1);
            assert!(p.log_rho[n as usize] >= floor - 1e-12);
        }
    }

    #[test]
    fn beta_outside_range_rejected() {
        let rate = exp_rate(Domain::OneSided, 0, 8);
        let sys = scalar(0.5, rate.window);
        let cert = DichotomyCertificate {
            d: 1.0,
            lambda: 0.5,
            epsilon: 0.0,
        };
        let nu = NuSequence::ones(rate.window);
        assert!(make_perturbation(&sys, &rate, &nu, &PerturbationSpec::new(0.1, 0.7, 1), Some(&cert)).is_err());
        assert!(make_perturbation(&sys, &rate, &nu, &PerturbationSpec::new(-0.1, 0.2, 1), None).is_err());
    }

    #[test]
    fn graph_operator_examples() {
        let w = Window::new(0, 5).unwrap();
        let rate = exp_rate(Domain::OneSided, 0, 5);
        let nu = NuSequence::ones(w);
        let a = 0.7;
        let sys = scalar(a, w);
        let mut x = vec![DVector::zeros(1); 6];
        x[0][0] = 2.0;
        let ax = apply_graph_operator(&GraphNormOperator::a_beta(&sys), &x).unwrap();
        assert_eq!(ax[0][0], 0.0);
        assert_relative_eq!(ax[1][0], -a * 2.0);
        assert!(ax[2..].iter().all(|v| v[0] == 0.0));
        assert_relative_eq!(
            graph_norm(&x, &sys, &rate, &nu, 0.0).unwrap(),
            2.0 + a * 2.0,
            max_relative = 1e-15
        );

        let hom: Sequence = (0..6).map(|k| DVector::from_element(1, a.powi(k))).collect();
        let ah = apply_graph_operator(&GraphNormOperator::a_beta(&sys), &hom).unwrap();
        assert!(ah.iter().all(|v| v[0].abs() < 1e-16));
        assert_relative_eq!(graph_norm(&hom, &sys, &rate, &nu, 0.0).unwrap(), 1.0);
        assert_eq!(
            graph_norm(&vec![DVector::zeros(1); 6], &sys, &rate, &nu, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn graph_operator_inverts_solver() {
        let rate = exp_rate(Domain::OneSided, 0, 15);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 3.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut y: Sequence = (0..16)
            .map(|_| DVector::from_fn(2, |_, _| rng.sample(StandardNormal)))
            .collect();
        y[0] = DVector::zeros(2);
        let b = Boundary::from_projections(&pm.system, &pm.projections);
        let rep = solve_admissibility(&pm.system, &pm.projections, &y, 0.0, &rate, &nu, &b).unwrap();
        let x: Sequence = rep.solution.iter().map(|v| DVector::from_vec(v.clone())).collect();
        let ax = apply_graph_operator(&GraphNormOperator::a_beta(&pm.system), &x).unwrap();
        for (p, q) in ax.iter().zip(&y).skip(1) {
            assert!((p - q).norm() <= 1e-8 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn margin_and_neumann_agree() {
        let rate = exp_rate(Domain::OneSided, 0, 20);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 1.0, 0).unwrap();
        let spec = PerturbationSpec::new(0.05, 0.3, 11);
        let p = make_perturbation(&pm.system, &rate, &nu, &spec, Some(&pm.certificate)).unwrap();
        let m = smallness_margin(&pm.system, &pm.projections, &rate, &nu, &spec, Some(&p)).unwrap();
        assert_relative_eq!(m.margin, margin_formula(0.05, m.gamma_sum, m.t_norm));
        assert!(m.predicted_persistence);
        let n = m.neumann.unwrap();
        assert!(n.q_block <= 0.05 * m.gamma_sum * m.t_norm * (1.0 + 1e-9));
        assert!(n.converged);
        assert!(n.relative_error < 1e-9, "{}", n.relative_error);

        let zero = smallness_margin(
            &pm.system,
            &pm.projections,
            &rate,
            &nu,
            &PerturbationSpec::new(0.0, 0.3, 1),
            None,
        )
        .unwrap();
        assert_eq!(zero.margin, 0.0);
        let m1 = margin_formula(0.01, 1.0, 2.0);
        let m2 = margin_formula(0.02, 1.0, 2.0);
        assert!(m2 > m1 && (m2 / m1 - 2.0).abs() < 0.02);
    }

    #[test]
    fn persistence_examples() {
        let rate = exp_rate(Domain::TwoSided, -30, 30);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 2.0, 1).unwrap();
        let opts = SplitOptions::default();
        let zero = make_perturbation(&pm.system, &rate, &nu, &PerturbationSpec::new(0.0, 0.3, 1), None).unwrap();
        let r = verify_persistence(&pm.system, &zero.matrices, &rate, &nu, None, None, &opts).unwrap();
        assert_eq!(r.verdict, PersistenceVerdict::Persisted);
        assert_eq!(r.max_drift, 0.0);
        assert_eq!(r.unperturbed, r.perturbed.unwrap());

        let p = make_perturbation(&pm.system, &rate, &nu, &PerturbationSpec::new(0.1, 0.3, 5), None).unwrap();
        let r = verify_persistence(&pm.system, &p.matrices, &rate, &nu, None, None, &opts).unwrap();
        assert_eq!(r.verdict, PersistenceVerdict::Persisted);
        assert!(r.max_drift > 0.0 && r.max_drift < 0.5);

        let weak = make_planted_model(&rate, &nu, 0.15, 0.15, (1, 1), 1.0, 1).unwrap();
        let p = make_perturbation(&weak.system, &rate, &nu, &PerturbationSpec::new(50.0, 0.0, 5), None).unwrap();
        let r = verify_persistence(
            &weak.system,
            &p.matrices,
            &rate,
            &nu,
            None,
            None,
            &SplitOptions {
                gap_threshold: 0.2,
                ..opts
            },
        );
        match r {
            Ok(r) => {
                if r.verdict == PersistenceVerdict::NotPersisted {
                    assert!(r.failure.is_some());
                }
            }
            Err(e) => assert!(e.is_analysis_failure()),
        }
    }
}
