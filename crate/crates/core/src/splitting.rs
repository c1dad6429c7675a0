//! Reconstruction of the invariant splitting `ℝ^d = S(n) ⊕ U(n)` from the
//! system alone, projections built from it, and the end-to-end
//! characterization pipeline.
//!
//! Subspaces come from QR sweeps of generic orthonormal frames: backward
//! through `A_kᵀ` for `S(n)` and forward through `A_k` for `U(n)`. Spans of
//! leading frame columns are carried exactly from one index to the next, so
//! the estimated splitting is invariant to rounding level.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::ProjectedCocycle;
use crate::dichotomy::{
    fit_certificate, verify_dichotomy, CertificateFit, DichotomyCertificate, ProjectionFamily, VerifyOptions,
    VerifyReport,
};
use crate::error::{invalid, Error, Result, Stage};
use crate::linalg::{principal_angles, random_orthogonal, spectral_norm, thin_qr, ScaledMatrix};
use crate::logspace::{exp_or_inf, Dd};
use crate::rates::{Domain, GrowthRate, NuSequence, Window};
use crate::system::LinearSystem;

const BACKWARD_FRAME_SEED: u64 = 0x5eed_0001;
const FORWARD_FRAME_SEED: u64 = 0x5eed_0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Minimal exponent separation (per unit of `ln μ`) across the cutoff.
    pub gap_threshold: f64,
    /// Exponent separating stable from unstable directions.
    pub cutoff: f64,
    /// Minimal number of steps between `n` and the far end of the window.
    pub horizon: usize,
    /// Required `gap · Δln μ` for a subspace to count as resolved.
    pub resolution: f64,
    /// Largest accepted condition number of `[S U]`.
    pub max_condition: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            gap_threshold: 0.2,
            cutoff: 0.0,
            horizon: 1,
            resolution: 36.0,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    pub n: i64,
    pub role: Role,
    pub basis: DMatrix<f64>,
    /// Exponents of the basis directions.
    #[serde(with = "crate::serde_f64::vec")]
    pub growth_exponents: Vec<f64>,
    /// Exponents of every frame direction, descending.
    #[serde(with = "crate::serde_f64::vec")]
    pub all_exponents: Vec<f64>,
    #[serde(with = "crate::serde_f64")]
    pub gap: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Frames `Q_n` of a QR sweep with the running sums of `ln|R_ii|`.
struct Sweep {
    window: Window,
    frames: Vec<DMatrix<f64>>,
    logs: Vec<Vec<Dd>>,
}

impl Sweep {
    fn frame(&self, n: i64) -> &DMatrix<f64> {
        &self.frames[self.window.offset(n)]
    }

    fn log_growth(&self, n: i64) -> &[Dd] {
        &self.logs[self.window.offset(n)]
    }
}

fn generic_frame(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_orthogonal(d, &mut rng)
}

fn accumulate(logs: &[Dd], step: &[f64], scale: Dd) -> Vec<Dd> {
    logs.iter().zip(step).map(|(a, b)| *a + scale + Dd::new(*b)).collect()
}

/// `Q_n R = 𝒜(N_max, n)ᵀ Q_{N_max}` for `n` from `to` up to `N_max`.
fn backward_sweep(sys: &LinearSystem, to: i64) -> Sweep {
    let w = sys.window();
    let d = sys.dim();
    let window = Window { min: to, max: w.max };
    let mut frames = vec![DMatrix::zeros(d, d); window.len()];
    let mut logs = vec![vec![Dd::ZERO; d]; window.len()];
    frames[window.len() - 1] = generic_frame(d, BACKWARD_FRAME_SEED);
    for k in (to..w.max).rev() {
        let i = window.offset(k);
        let a = sys.matrix(k);
        let (q, l) = thin_qr(&(a.mat.transpose() * &frames[i + 1]));
        logs[i] = accumulate(&logs[i + 1], &l, a.log_scale);
        frames[i] = q;
    }
    Sweep { window, frames, logs }
}

/// `Q_n R = 𝒜(n, N_min) Q_{N_min}` for `n` from `N_min` up to `to`.
fn forward_sweep(sys: &LinearSystem, start: DMatrix<f64>, to: i64) -> Result<Sweep> {
    let w = sys.window();
    let k = start.ncols();
    let window = Window { min: w.min, max: to };
    let mut frames = Vec::with_capacity(window.len());
    let mut logs = Vec::with_capacity(window.len());
    frames.push(start);
    logs.push(vec![Dd::ZERO; k]);
    for n in w.min..to {
        let i = window.offset(n);
        let a = sys.matrix(n);
        let (q, l) = thin_qr(&(&a.mat * &frames[i]));
        let scale = spectral_norm(&a.mat).max(f64::MIN_POSITIVE);
        if l.iter().any(|v| !(v.exp() > 1e-13 * scale)) {
            return Err(Error::RankDeficient { n: n + 1 });
        }
        logs.push(accumulate(&logs[i], &l, a.log_scale));
        frames.push(q);
    }
    Ok(Sweep { window, frames, logs })
}

fn exponents(log_growth: &[Dd], span: Dd) -> Vec<f64> {
    log_growth
        .iter()
        .map(|l| {
            if !l.is_finite() {
                f64::NEG_INFINITY
            } else {
                l.div(span).to_f64()
            }
        })
        .collect()
}

/// Number of trailing exponents below `cutoff` and the separation across
/// it. A one-sided split uses twice the distance to the cutoff.
fn classify(rho: &[f64], cutoff: f64) -> (usize, f64) {
    let below = rho.iter().filter(|r| **r < cutoff).count();
    let above_min = rho
        .iter()
        .copied()
        .filter(|r| *r > cutoff)
        .fold(f64::INFINITY, f64::min);
    let below_max = rho
        .iter()
        .copied()
        .filter(|r| *r < cutoff)
        .fold(f64::NEG_INFINITY, f64::max);
    let at_cutoff = rho.contains(&cutoff);
    let ordered = rho[..rho.len() - below].iter().all(|r| *r > cutoff);
    let gap = if at_cutoff || !ordered || rho.is_empty() {
        0.0
    } else if below == 0 {
        2.0 * (above_min - cutoff)
    } else if below == rho.len() {
        2.0 * (cutoff - below_max)
    } else {
        above_min - below_max
    };
    (below, gap)
}

fn check_gap(n: i64, gap: f64, opts: &SplitOptions) -> Result<()> {
    if gap >= opts.gap_threshold {
        Ok(())
    } else {
        Err(Error::NoGap {
            n,
            gap,
            threshold: opts.gap_threshold,
        })
    }
}

fn check_horizon(sys: &LinearSystem, n: i64, far: i64, opts: &SplitOptions) -> Result<()> {
    if !sys.window().contains(n) {
        return Err(Error::Range(format!("index {n} outside the window")));
    }
    if far.abs_diff(n) < opts.horizon.max(1) as u64 {
        return Err(Error::Range(format!(
            "fewer than {} steps between {n} and {far}",
            opts.horizon.max(1)
        )));
    }
    Ok(())
}

fn rate_span(rate: &GrowthRate, a: i64, b: i64) -> Dd {
    Dd::diff(rate.log_mu(a), rate.log_mu(b))
}

fn stable_from_sweep(sweep: &Sweep, n: i64, rate: &GrowthRate, cutoff: f64) -> SubspaceBasis {
    let rho = exponents(sweep.log_growth(n), rate_span(rate, sweep.window.max, n));
    let (ds, gap) = classify(&rho, cutoff);
    let q = sweep.frame(n);
    let d = q.ncols();
    SubspaceBasis {
        n,
        role: Role::Stable,
        basis: q.columns(d - ds, ds).into_owned(),
        growth_exponents: rho[d - ds..].to_vec(),
        all_exponents: rho,
        gap,
    }
}

fn unstable_from_sweep(sweep: &Sweep, n: i64, rate: &GrowthRate, cutoff: f64) -> SubspaceBasis {
    let rho = exponents(sweep.log_growth(n), rate_span(rate, n, sweep.window.min));
    let (ds, gap) = classify(&rho, cutoff);
    let du = rho.len() - ds;
    SubspaceBasis {
        n,
        role: Role::Unstable,
        basis: sweep.frame(n).columns(0, du).into_owned(),
        growth_exponents: rho[..du].to_vec(),
        all_exponents: rho,
        gap,
    }
}

/// Directions at `n` whose growth exponent over `[n, N_max]` lies below the
/// cutoff.
pub fn stable_subspace(sys: &LinearSystem, n: i64, rate: &GrowthRate, opts: &SplitOptions) -> Result<SubspaceBasis> {
    check_horizon(sys, n, sys.window().max, opts)?;
    let rate = rate.restrict(sys.window())?;
    let sweep = backward_sweep(sys, n);
    let b = stable_from_sweep(&sweep, n, &rate, opts.cutoff);
    check_gap(n, b.gap, opts)?;
    Ok(b)
}

/// One-sided: the orthonormalized image `𝒜(n, N_min)Z`. Two-sided: the
/// directions at `n` whose growth exponent over `[N_min, n]` lies above the
/// cutoff.
pub fn unstable_subspace(
    sys: &LinearSystem,
    n: i64,
    z_basis: Option<&DMatrix<f64>>,
    rate: &GrowthRate,
    opts: &SplitOptions,
) -> Result<SubspaceBasis> {
    let rate = rate.restrict(sys.window())?;
    match z_basis {
        Some(z) => {
            if !sys.window().contains(n) {
                return Err(Error::Range(format!("index {n} outside the window")));
            }
            if z.nrows() != sys.dim() {
                return Err(Error::Dimension(format!(
                    "Z basis has {} rows, system dimension is {}",
                    z.nrows(),
                    sys.dim()
                )));
            }
            let (z, _) = thin_qr(z);
            let sweep = forward_sweep(sys, z, n)?;
            let span = rate_span(&rate, n, sys.window().min);
            let rho = if n == sys.window().min {
                vec![f64::NAN; sweep.frame(n).ncols()]
            } else {
                exponents(sweep.log_growth(n), span)
            };
            Ok(SubspaceBasis {
                n,
                role: Role::Unstable,
                basis: sweep.frame(n).clone(),
                growth_exponents: rho.clone(),
                all_exponents: rho,
                gap: f64::NAN,
            })
        }
        None => {
            if sys.domain() == Domain::OneSided {
                return Err(invalid("one-sided unstable subspaces need a Z basis"));
            }
            check_horizon(sys, n, sys.window().min, opts)?;
            let start = generic_frame(sys.dim(), FORWARD_FRAME_SEED);
            let sweep = forward_sweep(sys, start, n)?;
            let b = unstable_from_sweep(&sweep, n, &rate, opts.cutoff);
            check_gap(n, b.gap, opts)?;
            Ok(b)
        }
    }
}

/// Oblique projection onto `span S` along `span U`.
pub fn projection_from_bases(
    s: &DMatrix<f64>,
    u: &DMatrix<f64>,
    max_condition: f64,
) -> std::result::Result<DMatrix<f64>, f64> {
    let d = s.nrows();
    let ds = s.ncols();
    let mut m = DMatrix::zeros(d, d);
    m.columns_mut(0, ds).copy_from(s);
    m.columns_mut(ds, d - ds).copy_from(u);
    let sv = crate::linalg::singular_values(&m);
    let cond = sv[0] / sv[d - 1];
    if !(cond <= max_condition) {
        return Err(cond);
    }
    let inv = m.clone().try_inverse().ok_or(f64::INFINITY)?;
    Ok(m.columns(0, ds) * inv.rows(0, ds))
}

/// `P_n = [S_n U_n]·diag(Id, 0)·[S_n U_n]^{−1}` at every index.
pub fn build_projections(
    window: Window,
    stable: &[SubspaceBasis],
    unstable: &[SubspaceBasis],
    max_condition: f64,
) -> Result<ProjectionFamily> {
    if stable.len() != window.len() || unstable.len() != window.len() {
        return Err(Error::Range("one basis pair per index is required".into()));
    }
    let mut ps = Vec::with_capacity(window.len());
    for (s, u) in stable.iter().zip(unstable) {
        let d = s.basis.nrows();
        if u.basis.nrows() != d {
            return Err(Error::Dimension("stable and unstable bases differ in length".into()));
        }
        if s.dim() + u.dim() != d {
            return Err(Error::SplitMismatch {
                stable: s.dim(),
                unstable: u.dim(),
                dim: d,
            });
        }
        let p = projection_from_bases(&s.basis, &u.basis, max_condition)
            .map_err(|cond| Error::Degenerate { n: s.n, cond })?;
        ps.push(p);
    }
    ProjectionFamily::new(window, ps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub n: i64,
    pub stable_dim: usize,
    pub unstable_dim: usize,
    /// Separation of the stable-sweep exponents at `n` across the split.
    #[serde(with = "crate::serde_f64")]
    pub gap: f64,
    /// Smallest principal angle between `S(n)` and `U(n)`.
    pub min_angle: f64,
    pub projection_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    pub full_window: Window,
    /// Window on which both subspaces are resolved.
    pub window: Window,
    pub stable_dim: usize,
    pub unstable_dim: usize,
    #[serde(with = "crate::serde_f64")]
    pub gap: f64,
    #[serde(with = "crate::serde_f64")]
    pub gap_stable: f64,
    #[serde(with = "crate::serde_f64::opt")]
    pub gap_unstable: Option<f64>,
    pub min_angle: f64,
    pub per_index: Vec<SplitIndex>,
    pub stable: Vec<SubspaceBasis>,
    pub unstable: Vec<SubspaceBasis>,
    pub verdict: SplitVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenBound {
    pub beta: f64,
    /// `max_{m≥n} ln(‖𝒢(m,n)‖ (μ_m/μ_n)^β / ν_n)`.
    pub log_sup: f64,
    #[serde(with = "crate::serde_f64")]
    pub sup: f64,
    pub argmax: (i64, i64),
}

/// Largest ratio `‖𝒢(m,n)‖ / ((μ_m/μ_n)^{−β} ν_n)` over `m ≥ n`.
pub fn green_bound(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    nu: &NuSequence,
    beta: f64,
) -> Result<GreenBound> {
    let w = sys.window();
    let rate = rate.restrict(w)?;
    let nu = nu.restrict(w)?;
    let cocycle = ProjectedCocycle::new(sys, proj)?;
    let cols: Vec<(Dd, i64, i64)> = w
        .indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let mut top = (Dd::NEG_INFINITY, n, n);
            for (i, x) in cocycle.stable_chain(n).iter().enumerate() {
                let m = n + i as i64;
                let v = x.log_norm() + rate.log_ratio(m, n).mul_f64(beta) - Dd::new(nu.log_nu(n));
                if v.total_cmp(&top.0).is_gt() {
                    top = (v, m, n);
                }
            }
            top
        })
        .collect();
    let (best, m, n) = cols.into_iter().fold((Dd::NEG_INFINITY, w.min, w.min), |a, b| {
        if b.0.total_cmp(&a.0).is_gt() {
            b
        } else {
            a
        }
    });
    let log_sup = best.to_f64();
    Ok(GreenBound {
        beta,
        log_sup,
        sup: exp_or_inf(log_sup),
        argmax: (m, n),
    })
}

#[derive(Debug, Clone)]
pub struct Characterization {
    pub system: LinearSystem,
    pub projections: ProjectionFamily,
    pub fit: CertificateFit,
    pub certificate: DichotomyCertificate,
    pub splitting: SplittingReport,
    pub verify: VerifyReport,
    pub green: GreenBound,
}

fn resolved_right(rate: &GrowthRate, w: Window, gap: f64, opts: &SplitOptions) -> i64 {
    let end = rate.log_mu(w.max);
    w.indices()
        .rev()
        .find(|&n| gap * Dd::diff(end, rate.log_mu(n)).to_f64() >= opts.resolution)
        .unwrap_or(w.min - 1)
}

fn resolved_left(rate: &GrowthRate, w: Window, gap: f64, opts: &SplitOptions) -> i64 {
    let start = rate.log_mu(w.min);
    w.indices()
        .find(|&n| gap * Dd::diff(rate.log_mu(n), start).to_f64() >= opts.resolution)
        .unwrap_or(w.max + 1)
}

/// Subspaces at every index, projections, fitted certificate, verification
/// and the Green bound at `β = λ̂/2`. `z_hint` overrides the one-sided
/// default `Z = S(N_min)^⊥`.
pub fn characterize(
    sys: &LinearSystem,
    rate: &GrowthRate,
    nu: &NuSequence,
    z_hint: Option<&DMatrix<f64>>,
    opts: &SplitOptions,
) -> Result<Characterization> {
    let full = sys.window();
    let rate_full = rate.restrict(full)?;
    let nu_full = nu.restrict(full)?;
    let d = sys.dim();
    if full.len() < 2 {
        return Err(Error::Range("characterization needs at least two indices".into()));
    }

    let back = backward_sweep(sys, full.min);
    let s0 = stable_from_sweep(&back, full.min, &rate_full, opts.cutoff);
    check_gap(full.min, s0.gap, opts).map_err(|e| e.at(Stage::StableSubspace))?;
    let ds = s0.dim();
    let du = d - ds;

    let (fwd, gap_unstable) = match sys.domain() {
        Domain::TwoSided => {
            let start = generic_frame(d, FORWARD_FRAME_SEED);
            let fwd = forward_sweep(sys, start, full.max).map_err(|e| e.at(Stage::UnstableSubspace))?;
            let u = unstable_from_sweep(&fwd, full.max, &rate_full, opts.cutoff);
            check_gap(full.max, u.gap, opts).map_err(|e| e.at(Stage::UnstableSubspace))?;
            if u.dim() != du {
                return Err(Error::SplitMismatch {
                    stable: ds,
                    unstable: u.dim(),
                    dim: d,
                }
                .at(Stage::UnstableSubspace));
            }
            (fwd, Some(u.gap))
        }
        Domain::OneSided => {
            let z = match z_hint {
                Some(z) => {
                    if z.nrows() != d || z.ncols() != du {
                        return Err(Error::Dimension(format!(
                            "Z hint must be {d}x{du}, got {}x{}",
                            z.nrows(),
                            z.ncols()
                        )));
                    }
                    thin_qr(z).0
                }
                None => back.frame(full.min).columns(0, du).into_owned(),
            };
            let fwd = forward_sweep(sys, z, full.max).map_err(|e| e.at(Stage::UnstableSubspace))?;
            (fwd, None)
        }
    };

    let window = if ds > 0 && du > 0 {
        let right = resolved_right(&rate_full, full, s0.gap, opts);
        let left = match gap_unstable {
            Some(g) => resolved_left(&rate_full, full, g, opts),
            None => full.min,
        };
        if right <= left {
            let gap = gap_unstable.map_or(s0.gap, |g| g.min(s0.gap));
            return Err(Error::Unresolved { gap }.at(Stage::StableSubspace));
        }
        Window::new(left, right)?
    } else {
        full
    };

    let mut stable = Vec::with_capacity(window.len());
    let mut unstable = Vec::with_capacity(window.len());
    let mut per_index = Vec::with_capacity(window.len());
    for n in window.indices() {
        let q = back.frame(n);
        let rho_s = if n == full.max {
            vec![f64::NAN; d]
        } else {
            exponents(back.log_growth(n), rate_span(&rate_full, full.max, n))
        };
        let gap = split_gap(&rho_s, du);
        stable.push(SubspaceBasis {
            n,
            role: Role::Stable,
            basis: q.columns(du, ds).into_owned(),
            growth_exponents: rho_s[du..].to_vec(),
            all_exponents: rho_s,
            gap,
        });
        let uq = fwd.frame(n);
        let rho_u = if n == full.min {
            vec![f64::NAN; uq.ncols()]
        } else {
            exponents(fwd.log_growth(n), rate_span(&rate_full, n, full.min))
        };
        let u_gap = if sys.domain() == Domain::TwoSided {
            split_gap(&rho_u, du)
        } else {
            f64::NAN
        };
        unstable.push(SubspaceBasis {
            n,
            role: Role::Unstable,
            basis: uq.columns(0, du).into_owned(),
            growth_exponents: rho_u[..du].to_vec(),
            all_exponents: rho_u,
            gap: u_gap,
        });
        per_index.push((n, gap));
    }

    let proj =
        build_projections(window, &stable, &unstable, opts.max_condition).map_err(|e| e.at(Stage::Projections))?;
    let per_index: Vec<SplitIndex> = per_index
        .into_iter()
        .zip(stable.iter().zip(&unstable))
        .map(|((n, gap), (s, u))| SplitIndex {
            n,
            stable_dim: ds,
            unstable_dim: du,
            gap,
            min_angle: principal_angles(&s.basis, &u.basis)
                .first()
                .copied()
                .unwrap_or(std::f64::consts::FRAC_PI_2),
            projection_norm: spectral_norm(proj.get(n)),
        })
        .collect();
    let min_angle = per_index
        .iter()
        .map(|p| p.min_angle)
        .fold(std::f64::consts::FRAC_PI_2, f64::min);

    let rsys = sys.restrict(window)?;
    let rrate = rate_full.restrict(window)?;
    let rnu = nu_full.restrict(window)?;
    let fit = fit_certificate(&rsys, &proj, &rrate, &rnu).map_err(|e| e.at(Stage::Fit))?;
    let certificate = fit.certificate;
    let verify = verify_dichotomy(&rsys, &proj, &rrate, &rnu, &certificate, &VerifyOptions::default())
        .map_err(|e| e.at(Stage::Verify))?;
    let green =
        green_bound(&rsys, &proj, &rrate, &rnu, certificate.lambda / 2.0).map_err(|e| e.at(Stage::GreenBound))?;

    let splitting = SplittingReport {
        full_window: full,
        window,
        stable_dim: ds,
        unstable_dim: du,
        gap: gap_unstable.map_or(s0.gap, |g| g.min(s0.gap)),
        gap_stable: s0.gap,
        gap_unstable,
        min_angle,
        per_index,
        stable,
        unstable,
        verdict: if verify.pass {
            SplitVerdict::Pass
        } else {
            SplitVerdict::Fail
        },
    };
    Ok(Characterization {
        system: rsys,
        projections: proj,
        fit,
        certificate,
        splitting,
        verify,
        green,
    })
}

/// Separation between the `k` leading and the remaining exponents, with
/// twice the distance to zero when one side is empty.
fn split_gap(rho: &[f64], k: usize) -> f64 {
    if rho.iter().any(|r| r.is_nan()) {
        return f64::NAN;
    }
    if k == 0 {
        -2.0 * rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else if k == rho.len() {
        2.0 * rho.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        let lo = rho[..k].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rho[k..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lo - hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SZeroBetaCheck {
    pub beta: f64,
    pub basis_s0: SubspaceBasis,
    pub basis_s_beta: SubspaceBasis,
    pub angles: Vec<f64>,
    pub equal: bool,
}

/// Compares `S_0(N_min)` (exponents below 0) with `S_β(N_min)` (exponents
/// below `−β`) for a one-sided system.
pub fn s_beta_zero_check(
    sys: &LinearSystem,
    rate: &GrowthRate,
    beta: f64,
    opts: &SplitOptions,
) -> Result<SZeroBetaCheck> {
    if sys.domain() != Domain::OneSided {
        return Err(invalid("the S_β(0) check applies to one-sided systems"));
    }
    if !(beta > 0.0) {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    let n = sys.window().min;
    check_horizon(sys, n, sys.window().max, opts)?;
    let rate = rate.restrict(sys.window())?;
    let sweep = backward_sweep(sys, n);
    let s0 = stable_from_sweep(&sweep, n, &rate, 0.0);
    check_gap(n, s0.gap, opts).map_err(|e| e.at(Stage::StableSubspace))?;
    let sb = stable_from_sweep(&sweep, n, &rate, -beta);
    check_gap(n, sb.gap, opts).map_err(|e| e.at(Stage::StableSubspace))?;
    let angles = principal_angles(&s0.basis, &sb.basis);
    let equal = s0.dim() == sb.dim() && angles.iter().all(|a| *a <= 1e-8);
    Ok(SZeroBetaCheck {
        beta,
        basis_s0: s0,
        basis_s_beta: sb,
        angles,
        equal,
    })
}

/// `A_n` restricted to consecutive unstable subspaces, as the matrix
/// `U_{n+1}ᵀ A_n U_n`.
pub fn unstable_step(sys: &LinearSystem, u_n: &DMatrix<f64>, u_next: &DMatrix<f64>, n: i64) -> ScaledMatrix {
    let a = sys.matrix(n);
    ScaledMatrix::new(a.log_scale, u_next.transpose() * &a.mat * u_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::subspace_distance;
    use crate::rates::RateKind;
    use crate::system::{make_planted, make_planted_model, scalar_example, PlantedSpec};
    use approx::assert_relative_eq;

    fn exp_rate(domain: Domain, min: i64, max: i64) -> GrowthRate {
        GrowthRate::new(RateKind::Exponential, domain, Window::new(min, max).unwrap()).unwrap()
    }

    #[test]
    fn diagonal_stable_subspace() {
        let rate = exp_rate(Domain::OneSided, 0, 30);
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![(-1.0f64).exp(), 1.0f64.exp()]));
        let sys = LinearSystem::constant(Domain::OneSided, rate.window, a).unwrap();
        let s = stable_subspace(&sys, 0, &rate, &SplitOptions::default()).unwrap();
        assert_eq!(s.dim(), 1);
        assert!(s.basis[(1, 0)].abs() < 1e-12);
        assert_relative_eq!(s.all_exponents[0], 1.0, epsilon = 0.05);
        assert_relative_eq!(s.growth_exponents[0], -1.0, epsilon = 0.05);
        assert!((s.gap - 2.0).abs() < 0.1);
    }

    #[test]
    fn identity_has_no_gap() {
        let rate = exp_rate(Domain::OneSided, 0, 10);
        let sys = LinearSystem::identity(Domain::OneSided, rate.window, 2).unwrap();
        let e = stable_subspace(&sys, 0, &rate, &SplitOptions::default()).unwrap_err();
        assert!(matches!(e, Error::NoGap { .. }));
        let nu = NuSequence::ones(rate.window);
        let e = characterize(&sys, &rate, &nu, None, &SplitOptions::default()).unwrap_err();
        assert_eq!(e.stage(), Some(Stage::StableSubspace));
        assert_eq!(e.code(), "no_gap");
    }

    #[test]
    fn scalar_example_characterization() {
        let (rate, sys) = scalar_example(Window::new(0, 12).unwrap()).unwrap();
        let s = stable_subspace(&sys, 0, &rate, &SplitOptions::default()).unwrap();
        assert_eq!(s.dim(), 1);
        assert_relative_eq!(s.growth_exponents[0], -0.5, max_relative = 1e-12);
        let nu = NuSequence::ones(rate.window);
        let c = characterize(&sys, &rate, &nu, None, &SplitOptions::default()).unwrap();
        assert_eq!(c.splitting.window, rate.window);
        assert_relative_eq!(c.projections.get(5)[(0, 0)], 1.0);
        assert_relative_eq!(c.certificate.lambda, 0.5, max_relative = 1e-12);
        assert_relative_eq!(c.certificate.d, 1.0, max_relative = 1e-12);
        assert!(c.verify.pass);
    }

    #[test]
    fn two_sided_planted_recovery() {
        let rate = exp_rate(Domain::TwoSided, -40, 40);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.5, (2, 2), 10.0, 3).unwrap();
        let c = characterize(&pm.system, &rate, &nu, None, &SplitOptions::default()).unwrap();
        let w = c.splitting.window;
        assert!(w.len() > 20);
        let planted = pm.projections.restrict(w).unwrap();
        for n in w.indices() {
            let got = crate::linalg::column_space(c.projections.get(n), 1e-8);
            let want = crate::linalg::column_space(planted.get(n), 1e-8);
            assert!(subspace_distance(&got, &want) < 1e-6);
            assert!(subspace_distance(c.projections.kernel_basis(n), planted.kernel_basis(n)) < 1e-6);
        }
        assert!((c.certificate.lambda - 1.0).abs() < 1e-3);
        assert!(c.verify.pass);
        for p in &c.splitting.per_index {
            assert_relative_eq!(1.0 / p.min_angle.sin(), p.projection_norm, max_relative = 1e-8);
        }
    }

    #[test]
    fn invariance_of_subspaces() {
        let rate = exp_rate(Domain::TwoSided, -30, 30);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 0.8, 1.2, (1, 2), 5.0, 9).unwrap();
        let c = characterize(&pm.system, &rate, &nu, None, &SplitOptions::default()).unwrap();
        let w = c.splitting.window;
        for n in w.min..w.max {
            let i = w.offset(n);
            for (b, next) in [
                (&c.splitting.stable[i].basis, &c.splitting.stable[i + 1].basis),
                (&c.splitting.unstable[i].basis, &c.splitting.unstable[i + 1].basis),
            ] {
                let img = thin_qr(&(&pm.system.matrix(n).mat * b)).0;
                assert!(subspace_distance(&img, next) < 1e-8);
            }
        }
    }

    #[test]
    fn one_sided_z_image() {
        let rate = exp_rate(Domain::OneSided, 0, 25);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 4.0, 5).unwrap();
        let z = pm.projections.kernel_basis(0).clone();
        let u = unstable_subspace(&pm.system, 10, Some(&z), &rate, &SplitOptions::default()).unwrap();
        assert!(subspace_distance(&u.basis, pm.projections.kernel_basis(10)) < 1e-8);
        let empty = DMatrix::zeros(2, 0);
        let u = unstable_subspace(&pm.system, 10, Some(&empty), &rate, &SplitOptions::default()).unwrap();
        assert_eq!(u.dim(), 0);
        assert!(unstable_subspace(&pm.system, 10, None, &rate, &SplitOptions::default()).is_err());
        let c = characterize(&pm.system, &rate, &nu, Some(&z), &SplitOptions::default()).unwrap();
        for n in c.splitting.window.indices() {
            assert!(subspace_distance(c.projections.kernel_basis(n), pm.projections.kernel_basis(n)) < 1e-8);
        }
    }

    #[test]
    fn projection_examples() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let p = projection_from_bases(&e1, &e2, 1e12).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = DMatrix::from_column_slice(2, 1, &[h, h]);
        let u = DMatrix::from_column_slice(2, 1, &[-h, h]);
        let p = projection_from_bases(&s, &u, 1e12).unwrap();
        assert_relative_eq!(spectral_norm(&p), 1.0, max_relative = 1e-14);
        let near = DMatrix::from_column_slice(2, 1, &[1.0, 1e-14]);
        assert!(projection_from_bases(&e1, &near, 1e12).is_err());
    }

    #[test]
    fn s_beta_zero_examples() {
        let rate = exp_rate(Domain::OneSided, 0, 40);
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), 3.0, 2).unwrap();
        let r = s_beta_zero_check(&pm.system, &rate, 0.5, &SplitOptions::default()).unwrap();
        assert!(r.equal);
        let spec = PlantedSpec {
            exponents: vec![-1.0, -0.25, 1.0],
            similarity_cond: 3.0,
            vary_similarity: false,
            seed: 4,
        };
        let pm = make_planted(&rate, &nu, &spec).unwrap();
        let r = s_beta_zero_check(&pm.system, &rate, 0.5, &SplitOptions::default()).unwrap();
        assert!(!r.equal);
        assert_eq!((r.basis_s0.dim(), r.basis_s_beta.dim()), (2, 1));
        let expanding =
            LinearSystem::constant(Domain::OneSided, rate.window, DMatrix::identity(2, 2) * 2.0f64.exp()).unwrap();
        let r = s_beta_zero_check(&expanding, &rate, 0.5, &SplitOptions::default()).unwrap();
        assert!(r.equal && r.basis_s0.dim() == 0);
    }
}
