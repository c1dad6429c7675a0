//! Projection families, the dichotomy inequality ledger and certificate fits.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::ProjectedCocycle;
use crate::error::{invalid, Error, Result};
use crate::linalg::{column_space, spectral_norm};
use crate::logspace::{exp_or_inf, Dd};
use crate::rates::{Domain, GrowthRate, NuSequence, Window};
use crate::system::LinearSystem;

/// `P_n` on a window, with orthonormal bases of each kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFamily {
    window: Window,
    stable_rank: usize,
    projections: Vec<DMatrix<f64>>,
    ranks: Vec<usize>,
    kernel_bases: Vec<DMatrix<f64>>,
}

const RANK_TOL: f64 = 1e-8;

impl ProjectionFamily {
    pub fn new(window: Window, projections: Vec<DMatrix<f64>>) -> Result<Self> {
        if projections.len() != window.len() {
            return Err(Error::Range(format!(
                "{} projections for a window of {} indices",
                projections.len(),
                window.len()
            )));
        }
        let d = projections[0].nrows();
        let mut ranks = Vec::with_capacity(projections.len());
        let mut kernel_bases = Vec::with_capacity(projections.len());
        for (i, p) in projections.iter().enumerate() {
            if p.nrows() != d || p.ncols() != d {
                return Err(Error::Dimension(format!(
                    "P_{} is {}x{}, expected {d}x{d}",
                    window.min + i as i64,
                    p.nrows(),
                    p.ncols()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("P_{} has a non-finite entry", window.min + i as i64)));
            }
            let r = column_space(p, RANK_TOL).ncols();
            let q = DMatrix::identity(d, d) - p;
            let k = d - r;
            kernel_bases.push(crate::linalg::svd(&q).u.columns(0, k).into_owned());
            ranks.push(r);
        }
        Ok(ProjectionFamily {
            window,
            stable_rank: ranks[0],
            projections,
            ranks,
            kernel_bases,
        })
    }

    pub fn identity(window: Window, d: usize) -> Self {
        Self::constant(window, DMatrix::identity(d, d)).expect("identity is a projection")
    }

    pub fn constant(window: Window, p: DMatrix<f64>) -> Result<Self> {
        Self::new(window, vec![p; window.len()])
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.projections[0].nrows()
    }

    pub fn stable_rank(&self) -> usize {
        self.stable_rank
    }

    pub fn get(&self, n: i64) -> &DMatrix<f64> {
        &self.projections[self.window.offset(n)]
    }

    pub fn rank(&self, n: i64) -> usize {
        self.ranks[self.window.offset(n)]
    }

    /// Orthonormal basis of `Ker P_n`.
    pub fn kernel_basis(&self, n: i64) -> &DMatrix<f64> {
        &self.kernel_bases[self.window.offset(n)]
    }

    pub fn restrict(&self, window: Window) -> Result<ProjectionFamily> {
        if !self.window.contains_window(&window) {
            return Err(Error::Range("restriction outside the projection window".into()));
        }
        let a = self.window.offset(window.min);
        let b = self.window.offset(window.max);
        ProjectionFamily::new(window, self.projections[a..=b].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DichotomyCertificate {
    #[serde(rename = "D")]
    pub d: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub structural_tol: f64,
    pub slack_tol: f64,
    /// Keep every `(m, n)` slack for heatmaps.
    pub keep_grid: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            structural_tol: 1e-10,
            slack_tol: 1e-8,
            keep_grid: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackRecord {
    pub side: Side,
    pub m: i64,
    pub n: i64,
    #[serde(with = "crate::serde_f64")]
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDiagnostics {
    pub n: i64,
    /// `‖A_nP_n − P_{n+1}A_n‖` on the unit-normalized `A_n`, divided by
    /// `max(1, ‖P_n‖, ‖P_{n+1}‖)`; absent at the right end.
    pub commuting_residual: Option<f64>,
    pub idempotence_residual: f64,
    pub rank: usize,
    /// `σ_min/‖·‖` of the kernel restriction of `A_n`; absent at the right end.
    #[serde(with = "crate::serde_f64::opt")]
    pub kernel_ratio: Option<f64>,
    pub projection_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub certificate: DichotomyCertificate,
    pub per_index: Vec<IndexDiagnostics>,
    pub max_commuting_residual: f64,
    pub max_idempotence_residual: f64,
    pub rank_constant: bool,
    pub kernel_invertible: bool,
    pub worst_stable: Option<SlackRecord>,
    pub worst_unstable: Option<SlackRecord>,
    #[serde(with = "crate::serde_f64")]
    pub max_slack: f64,
    /// `max_n (ln‖P_n‖ − ln D − ln ν_n)`.
    #[serde(with = "crate::serde_f64")]
    pub max_projection_slack: f64,
    pub grid: Option<Vec<SlackRecord>>,
    pub structural_ok: bool,
    pub pass: bool,
}

/// `ln‖·‖ − ln ν_n + λ·Δln μ`, the quantity bounded by `ln D`.
fn residual(log_norm: Dd, log_nu: f64, lambda: f64, dl: Dd) -> Dd {
    log_norm - Dd::new(log_nu) + dl.mul_f64(lambda)
}

/// One column of the pair data: `(m, ln‖X(m,n)‖)` for `m ≥ n` and
/// `(m, ln‖Y(m,n)‖)` for `m ≤ n`.
struct PairColumn {
    n: i64,
    stable: Vec<(i64, Dd)>,
    unstable: Vec<(i64, Dd)>,
}

fn pair_columns(cocycle: &ProjectedCocycle) -> Vec<PairColumn> {
    let w = cocycle.window();
    w.indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let stable = cocycle
                .stable_chain(n)
                .iter()
                .enumerate()
                .map(|(i, x)| (n + i as i64, x.log_norm()))
                .collect();
            let unstable = cocycle
                .unstable_chain(n)
                .iter()
                .enumerate()
                .filter_map(|(i, y)| y.as_ref().map(|y| (w.min + i as i64, y.log_norm())))
                .collect();
            PairColumn { n, stable, unstable }
        })
        .collect()
}

fn check_inputs(sys: &LinearSystem, rate: &GrowthRate, nu: &NuSequence) -> Result<()> {
    let w = sys.window();
    if !rate.window.contains_window(&w) || !nu.window.contains_window(&w) {
        return Err(Error::Range("rate and nu must cover the system window".into()));
    }
    Ok(())
}

fn max_slack_record(a: Option<SlackRecord>, b: SlackRecord) -> Option<SlackRecord> {
    match a {
        Some(a) if a.slack >= b.slack || b.slack.is_nan() => Some(a),
        _ => Some(b),
    }
}

/// Checks commuting, idempotence, constant rank, kernel invertibility and
/// every inequality `‖𝒜(m,n)P_n‖ ≤ Dν_n(μ_m/μ_n)^{−λ}` (and its unstable
/// mirror) on the window.
pub fn verify_dichotomy(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    nu: &NuSequence,
    cert: &DichotomyCertificate,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    check_inputs(sys, rate, nu)?;
    let cocycle = ProjectedCocycle::new(sys, proj)?;
    let w = sys.window();
    let ratios = cocycle.kernel_ratios();

    let per_index: Vec<IndexDiagnostics> = w
        .indices()
        .map(|n| {
            let p = proj.get(n);
            let pn = spectral_norm(p);
            let idem = spectral_norm(&(p * p - p)) / pn.max(1.0);
            let (comm, kr) = if n < w.max {
                let a = &sys.matrix(n).mat;
                let p1 = proj.get(n + 1);
                let r = spectral_norm(&(a * p - p1 * a)) / pn.max(spectral_norm(p1)).max(1.0);
                (Some(r), Some(ratios[w.offset(n)]))
            } else {
                (None, None)
            };
            IndexDiagnostics {
                n,
                commuting_residual: comm,
                idempotence_residual: idem,
                rank: proj.rank(n),
                kernel_ratio: kr,
                projection_norm: pn,
            }
        })
        .collect();

    let max_comm = per_index
        .iter()
        .filter_map(|d| d.commuting_residual)
        .fold(0.0, f64::max);
    let max_idem = per_index.iter().map(|d| d.idempotence_residual).fold(0.0, f64::max);
    let rank_constant = per_index.iter().all(|d| d.rank == proj.stable_rank());
    let kernel_invertible = cocycle.first_singular().is_none();

    let log_d = cert.d.ln();
    let columns = pair_columns(&cocycle);
    let mut worst_stable = None;
    let mut worst_unstable = None;
    let mut grid = opts.keep_grid.then(Vec::new);
    for col in &columns {
        let n = col.n;
        let lnu = nu.log_nu(n);
        for &(m, ln) in &col.stable {
            let s = (residual(ln, lnu, cert.lambda, rate.log_ratio(m, n)) - Dd::new(log_d)).to_f64();
            let rec = SlackRecord {
                side: Side::Stable,
                m,
                n,
                slack: s,
            };
            worst_stable = max_slack_record(worst_stable, rec);
            if let Some(g) = grid.as_mut() {
                g.push(rec);
            }
        }
        for &(m, ln) in &col.unstable {
            let s = (residual(ln, lnu, cert.lambda, rate.log_ratio(n, m)) - Dd::new(log_d)).to_f64();
            let rec = SlackRecord {
                side: Side::Unstable,
                m,
                n,
                slack: s,
            };
            worst_unstable = max_slack_record(worst_unstable, rec);
            if let Some(g) = grid.as_mut() {
                g.push(rec);
            }
        }
    }
    let max_slack = [worst_stable, worst_unstable]
        .iter()
        .flatten()
        .map(|r| r.slack)
        .fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { b } else { a.max(b) });
    let max_projection_slack = per_index
        .iter()
        .map(|d| d.projection_norm.ln() - log_d - nu.log_nu(d.n))
        .fold(f64::NEG_INFINITY, f64::max);

    let structural_ok =
        max_comm <= opts.structural_tol && max_idem <= opts.structural_tol && rank_constant && kernel_invertible;
    let pass = structural_ok && max_slack <= opts.slack_tol;
    Ok(VerifyReport {
        certificate: *cert,
        per_index,
        max_commuting_residual: max_comm,
        max_idempotence_residual: max_idem,
        rank_constant,
        kernel_invertible,
        worst_stable,
        worst_unstable,
        max_slack,
        max_projection_slack,
        grid,
        structural_ok,
        pass,
    })
}

/// Least-squares line `y ≈ a + b·x` in double-double; `None` without spread in `x`.
fn ls_slope(points: &[(Dd, Dd)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let k = Dd::new(points.len() as f64);
    let (mut sx, mut sy) = (Dd::ZERO, Dd::ZERO);
    for (x, y) in points {
        sx += *x;
        sy += *y;
    }
    let (mx, my) = (sx.div(k), sy.div(k));
    let (mut sxx, mut sxy) = (Dd::ZERO, Dd::ZERO);
    for (x, y) in points {
        let dx = *x - mx;
        sxx += dx.mul(dx);
        sxy += dx.mul(*y - my);
    }
    if !(sxx.to_f64() > 0.0) {
        return None;
    }
    let b = sxy.div(sxx);
    let a = my - b.mul(mx);
    Some((b.to_f64(), a.to_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFit {
    pub certificate: DichotomyCertificate,
    /// Decay exponent of the stable data alone.
    pub lambda_stable: Option<f64>,
    /// Growth exponent of the unstable data alone.
    pub lambda_unstable: Option<f64>,
    /// `max (ln‖·‖ − ln ν_n + λ̂·Δln μ)` over all pairs.
    pub log_d: f64,
    pub pairs: usize,
}

/// Slope of `ln ν` against `|ln μ|` on each tail (right: `ln μ ≥ 0`, left:
/// `ln μ < 0`), floored at zero.
pub fn estimate_epsilon(rate: &GrowthRate, nu: &NuSequence) -> f64 {
    let w = rate.window;
    let right: Vec<(Dd, Dd)> = w
        .indices()
        .filter(|&n| rate.log_mu(n) >= 0.0 && nu.window.contains(n))
        .map(|n| (Dd::new(rate.log_mu(n)), Dd::new(nu.log_nu(n))))
        .collect();
    let left: Vec<(Dd, Dd)> = w
        .indices()
        .filter(|&n| rate.log_mu(n) < 0.0 && nu.window.contains(n))
        .map(|n| (Dd::new(-rate.log_mu(n)), Dd::new(nu.log_nu(n))))
        .collect();
    let mut eps = 0.0f64;
    if let Some((b, _)) = ls_slope(&right) {
        eps = eps.max(b);
    }
    if rate.domain == Domain::TwoSided {
        if let Some((b, _)) = ls_slope(&left) {
            eps = eps.max(b);
        }
    }
    eps
}

/// Separate stable and unstable regressions of `ln‖·‖ − ln ν_n` on
/// `Δln μ`; `λ̂` is the smaller exponent and `D̂` the envelope of all pairs.
pub fn fit_certificate(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    nu: &NuSequence,
) -> Result<CertificateFit> {
    check_inputs(sys, rate, nu)?;
    let cocycle = ProjectedCocycle::new(sys, proj)?;
    cocycle.require_invertible()?;
    let columns = pair_columns(&cocycle);
    let ds = proj.stable_rank();
    let du = proj.dim() - ds;
    let mut stable_pts = Vec::new();
    let mut unstable_pts = Vec::new();
    for col in &columns {
        let lnu = Dd::new(nu.log_nu(col.n));
        if ds > 0 {
            for &(m, ln) in &col.stable {
                stable_pts.push((rate.log_ratio(m, col.n), ln - lnu));
            }
        }
        if du > 0 {
            for &(m, ln) in &col.unstable {
                unstable_pts.push((rate.log_ratio(col.n, m), ln - lnu));
            }
        }
    }
    let lambda_stable = ls_slope(&stable_pts).map(|(b, _)| -b);
    let lambda_unstable = ls_slope(&unstable_pts).map(|(b, _)| -b);
    let lambda = match (lambda_stable, lambda_unstable) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => {
            return Err(invalid(
                "not enough index pairs to fit a certificate (window too short)",
            ))
        }
    };
    if !(lambda > 0.0) {
        return Err(Error::NotDichotomic { lambda });
    }
    let mut worst = Dd::NEG_INFINITY;
    for (x, y) in stable_pts.iter().chain(&unstable_pts) {
        let r = *y + x.mul_f64(lambda);
        if r.total_cmp(&worst).is_gt() {
            worst = r;
        }
    }
    let mut d = worst.to_f64().exp();
    while Dd::new(d.ln()).total_cmp(&worst).is_lt() {
        d = d.next_up();
    }
    let epsilon = estimate_epsilon(&rate.restrict(sys.window())?, &nu.restrict(sys.window())?);
    Ok(CertificateFit {
        certificate: DichotomyCertificate { d, lambda, epsilon },
        lambda_stable,
        lambda_unstable,
        log_d: worst.to_f64(),
        pairs: stable_pts.len() + unstable_pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MunuCheck {
    pub finite: bool,
    /// `sup_{n ≥ 0} μ_n^{−ε}ν_n` over the window.
    #[serde(with = "crate::serde_f64")]
    pub sup_right: f64,
    #[serde(with = "crate::serde_f64")]
    pub log_sup_right: f64,
    /// `sup_{n ≤ 0} μ_n^{ε}ν_n` (two-sided only).
    #[serde(with = "crate::serde_f64::opt")]
    pub sup_left: Option<f64>,
    #[serde(with = "crate::serde_f64::opt")]
    pub log_sup_left: Option<f64>,
}

pub fn check_munu(rate: &GrowthRate, nu: &NuSequence, epsilon: f64) -> Result<MunuCheck> {
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if !nu.window.contains_window(&rate.window) {
        return Err(Error::Range("nu must cover the rate window".into()));
    }
    let w = rate.window;
    let log_right = w
        .indices()
        .filter(|&n| n >= 0)
        .map(|n| nu.log_nu(n) - epsilon * rate.log_mu(n))
        .fold(f64::NEG_INFINITY, f64::max);
    let log_left = (rate.domain == Domain::TwoSided).then(|| {
        w.indices()
            .filter(|&n| n <= 0)
            .map(|n| nu.log_nu(n) + epsilon * rate.log_mu(n))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let sup_right = exp_or_inf(log_right);
    let sup_left = log_left.map(exp_or_inf);
    Ok(MunuCheck {
        finite: sup_right.is_finite() && sup_left.is_none_or(|s| s.is_finite()),
        sup_right,
        log_sup_right: log_right,
        sup_left,
        log_sup_left: log_left,
    })
}

/// Open interval of admissible `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRange {
    pub lo: f64,
    pub hi: f64,
}

impl BetaRange {
    pub fn contains(&self, beta: f64) -> bool {
        self.lo < beta && beta < self.hi
    }

    /// `lo + t·(hi − lo)` for `t ∈ (0, 1)`.
    pub fn interior(&self, t: f64) -> f64 {
        self.lo + t * (self.hi - self.lo)
    }
}

/// `(−(λ−ε), λ)` one-sided, `(−(λ−ε), λ−ε)` two-sided.
pub fn beta_range(cert: &DichotomyCertificate, domain: Domain) -> Result<BetaRange> {
    if !(cert.epsilon < cert.lambda) {
        return Err(Error::EmptyBetaRange {
            lambda: cert.lambda,
            epsilon: cert.epsilon,
        });
    }
    let gap = cert.lambda - cert.epsilon;
    Ok(BetaRange {
        lo: -gap,
        hi: match domain {
            Domain::OneSided => cert.lambda,
            Domain::TwoSided => gap,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RateKind;
    use crate::system::{make_planted_model, scalar_example};
    use approx::assert_relative_eq;

    fn exp_rate(a: i64, b: i64) -> GrowthRate {
        let domain = if a < 0 { Domain::TwoSided } else { Domain::OneSided };
        GrowthRate::new(RateKind::Exponential, domain, Window::new(a, b).unwrap()).unwrap()
    }

    #[test]
    fn scalar_example_passes_with_zero_slack() {
        let (rate, sys) = scalar_example(Window::new(0, 20).unwrap()).unwrap();
        let nu = NuSequence::ones(rate.window);
        let proj = ProjectionFamily::identity(rate.window, 1);
        let cert = DichotomyCertificate {
            d: 1.0,
            lambda: 0.5,
            epsilon: 0.0,
        };
        let rep = verify_dichotomy(&sys, &proj, &rate, &nu, &cert, &VerifyOptions::default()).unwrap();
        assert!(rep.pass);
        assert!(rep.max_slack.abs() <= 1e-12, "{}", rep.max_slack);
    }

    #[test]
    fn identity_system_fails() {
        let rate = exp_rate(0, 10);
        let nu = NuSequence::ones(rate.window);
        let sys = LinearSystem::identity(Domain::OneSided, rate.window, 2).unwrap();
        let proj = ProjectionFamily::identity(rate.window, 2);
        let cert = DichotomyCertificate {
            d: 1.0,
            lambda: 0.3,
            epsilon: 0.0,
        };
        let rep = verify_dichotomy(&sys, &proj, &rate, &nu, &cert, &VerifyOptions::default()).unwrap();
        assert!(!rep.pass);
        let w = rep.worst_stable.unwrap();
        assert_eq!((w.m, w.n), (10, 0));
        assert_relative_eq!(w.slack, 3.0, max_relative = 1e-12);
        assert!(matches!(
            fit_certificate(&sys, &proj, &rate, &nu),
            Err(Error::NotDichotomic { .. })
        ));
    }

    #[test]
    fn planted_fit_exact() {
        let rate = exp_rate(0, 30);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 1.0, 0).unwrap();
        let fit = fit_certificate(&pm.system, &pm.projections, &rate, &nu).unwrap();
        assert!((fit.certificate.lambda - 1.0).abs() < 1e-12);
        assert!(fit.certificate.d <= 1.0 + 1e-12 && fit.certificate.d >= 1.0);
        let rep = verify_dichotomy(
            &pm.system,
            &pm.projections,
            &rate,
            &nu,
            &fit.certificate,
            &VerifyOptions::default(),
        )
        .unwrap();
        assert!(rep.pass);
        assert!(rep.max_slack <= 0.0);
    }

    #[test]
    fn scalar_example_fit() {
        let (rate, sys) = scalar_example(Window::new(0, 20).unwrap()).unwrap();
        let nu = NuSequence::ones(rate.window);
        let proj = ProjectionFamily::identity(rate.window, 1);
        let fit = fit_certificate(&sys, &proj, &rate, &nu).unwrap();
        assert_eq!(fit.certificate.lambda, 0.5);
        assert_relative_eq!(fit.certificate.d, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn epsilon_from_power_nu() {
        let rate = exp_rate(0, 40);
        let nu = NuSequence::power(&rate, 0.1).unwrap();
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 1.0, 0).unwrap();
        let fit = fit_certificate(&pm.system, &pm.projections, &rate, &nu).unwrap();
        assert!((fit.certificate.epsilon - 0.1).abs() < 1e-12);
    }

    #[test]
    fn munu_examples() {
        let rate = exp_rate(0, 100);
        let ones = NuSequence::ones(rate.window);
        assert_eq!(check_munu(&rate, &ones, 0.3).unwrap().sup_right, 1.0);
        let p1 = NuSequence::power(&rate, 0.1).unwrap();
        assert_relative_eq!(check_munu(&rate, &p1, 0.1).unwrap().sup_right, 1.0);
        let p2 = NuSequence::power(&rate, 0.2).unwrap();
        assert_relative_eq!(
            check_munu(&rate, &p2, 0.1).unwrap().sup_right,
            10f64.exp(),
            max_relative = 1e-12
        );
        let two = exp_rate(-5, 5);
        let ones = NuSequence::ones(two.window);
        let c = check_munu(&two, &ones, 0.5).unwrap();
        assert_eq!(c.sup_left, Some(1.0));
        assert!(c.finite);
        assert!(check_munu(&two, &ones, -1.0).is_err());
    }

    #[test]
    fn beta_range_examples() {
        let c = |lambda, epsilon| DichotomyCertificate {
            d: 1.0,
            lambda,
            epsilon,
        };
        let r = beta_range(&c(0.5, 0.0), Domain::OneSided).unwrap();
        assert_eq!((r.lo, r.hi), (-0.5, 0.5));
        let r = beta_range(&c(1.0, 0.2), Domain::TwoSided).unwrap();
        assert_relative_eq!(r.lo, -0.8);
        assert_relative_eq!(r.hi, 0.8);
        let r = beta_range(&c(1.0, 0.2), Domain::OneSided).unwrap();
        assert_relative_eq!(r.lo, -0.8);
        assert_eq!(r.hi, 1.0);
        assert!(!r.contains(1.0) && r.contains(0.0));
        assert!(matches!(
            beta_range(&c(0.2, 0.2), Domain::OneSided),
            Err(Error::EmptyBetaRange { .. })
        ));
    }

    #[test]
    fn projection_family_rank_and_kernel() {
        let w = Window::new(0, 2).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let f = ProjectionFamily::constant(w, p).unwrap();
        assert_eq!(f.stable_rank(), 1);
        let k = f.kernel_basis(1);
        assert_eq!(k.ncols(), 1);
        let v = f.get(1) * k;
        assert!(v.norm() < 1e-14);
        assert!(ProjectionFamily::new(w, vec![DMatrix::identity(2, 2)]).is_err());
    }
}
