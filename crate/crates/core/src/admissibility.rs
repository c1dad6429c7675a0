//! Green kernel, admissibility solver, its boundary-value oracle, operator
//! norms of the solution map and the divergent doubly-exponential example.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::ProjectedCocycle;
use crate::dichotomy::{DichotomyCertificate, ProjectionFamily};
use crate::error::{invalid, Error, Result};
use crate::linalg::{column_space, subspace_distance, BandMatrix, ScaledMatrix};
use crate::logspace::{exp_or_inf, log_diff_exp, log_expm1, log_sum_exp, Dd, LN_2};
use crate::rates::{
    check_sequence, compute_n0, log_norm, Domain, GrowthRate, NormP, NuSequence, Sequence, WeightedNormSpec,
};
use crate::system::LinearSystem;

/// Boundary condition of the admissibility problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Initial values restricted to `Z`, given by an orthonormal basis.
    OneSided {
        z_basis: DMatrix<f64>,
    },
    TwoSided,
}

impl Boundary {
    /// `Z = Ker P_0` for one-sided systems, two-sided otherwise.
    pub fn from_projections(sys: &LinearSystem, proj: &ProjectionFamily) -> Boundary {
        match sys.domain() {
            Domain::OneSided => Boundary::OneSided {
                z_basis: proj.kernel_basis(sys.window().min).clone(),
            },
            Domain::TwoSided => Boundary::TwoSided,
        }
    }
}

fn check_boundary(sys: &LinearSystem, proj: &ProjectionFamily, boundary: &Boundary) -> Result<()> {
    match (sys.domain(), boundary) {
        (Domain::OneSided, Boundary::OneSided { z_basis }) => {
            let k = proj.kernel_basis(sys.window().min);
            if z_basis.nrows() != sys.dim() {
                return Err(Error::Dimension(format!(
                    "Z basis has {} rows, system dimension is {}",
                    z_basis.nrows(),
                    sys.dim()
                )));
            }
            let gram = z_basis.transpose() * z_basis;
            if (gram - DMatrix::identity(z_basis.ncols(), z_basis.ncols())).norm() > 1e-10 {
                return Err(invalid("Z basis is not orthonormal"));
            }
            if subspace_distance(z_basis, k) > 1e-8 {
                return Err(invalid("Z does not span the kernel of P_0"));
            }
            Ok(())
        }
        (Domain::TwoSided, Boundary::TwoSided) => Ok(()),
        _ => Err(invalid("boundary kind does not match the system domain")),
    }
}

/// `𝒢(m, n)` with lazily computed, shareable columns.
pub struct GreenKernel<'a> {
    cocycle: ProjectedCocycle<'a>,
    columns: Vec<OnceLock<Vec<ScaledMatrix>>>,
}

impl<'a> GreenKernel<'a> {
    pub fn new(sys: &'a LinearSystem, proj: &'a ProjectionFamily) -> Result<Self> {
        let cocycle = ProjectedCocycle::new(sys, proj)?;
        let columns = (0..sys.window().len()).map(|_| OnceLock::new()).collect();
        Ok(GreenKernel { cocycle, columns })
    }

    pub fn cocycle(&self) -> &ProjectedCocycle<'a> {
        &self.cocycle
    }

    /// All `𝒢(m, n)` for fixed `n`, ordered by `m`.
    pub fn column(&self, n: i64) -> Result<&[ScaledMatrix]> {
        let w = self.cocycle.window();
        if !w.contains(n) {
            return Err(Error::Range(format!("column {n} outside the window")));
        }
        let cell = &self.columns[w.offset(n)];
        if let Some(c) = cell.get() {
            return Ok(c);
        }
        let col = self.cocycle.green_column(n)?;
        Ok(cell.get_or_init(|| col))
    }

    pub fn green(&self, m: i64, n: i64) -> Result<ScaledMatrix> {
        let w = self.cocycle.window();
        if !w.contains(m) {
            return Err(Error::Range(format!("row {m} outside the window")));
        }
        Ok(self.column(n)?[w.offset(m)].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub beta: f64,
    pub solution: Vec<Vec<f64>>,
    /// `max_n μ_{n+1}^β‖x_{n+1} − A_n x_n − y_{n+1}‖ / (1 + ‖y‖_{1,β})`.
    pub max_residual: f64,
    #[serde(with = "crate::serde_f64")]
    pub input_norm_1beta: f64,
    #[serde(with = "crate::serde_f64")]
    pub solution_norm_inf_beta: f64,
    /// `‖x‖_{∞,β} / ‖y‖_{1,β}` (zero for zero input).
    #[serde(with = "crate::serde_f64")]
    pub bound_constant: f64,
    /// The `|·|` variants, present for two-sided rates that cross 1.
    pub abs_norms: Option<AbsNorms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsNorms {
    pub n0: i64,
    #[serde(with = "crate::serde_f64")]
    pub input_norm: f64,
    #[serde(with = "crate::serde_f64")]
    pub solution_norm: f64,
}

fn to_rows(x: &[DVector<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|v| v.iter().copied().collect()).collect()
}

fn check_solve_inputs(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    y: &[DVector<f64>],
    boundary: &Boundary,
) -> Result<()> {
    let d = check_sequence(y, &sys.window())?;
    if d != sys.dim() {
        return Err(Error::Dimension(format!(
            "input vectors have length {d}, system dimension is {}",
            sys.dim()
        )));
    }
    check_boundary(sys, proj, boundary)?;
    if sys.domain() == Domain::OneSided && y[0].iter().any(|v| *v != 0.0) {
        return Err(Error::NonzeroInitialInput);
    }
    Ok(())
}

/// Weighted residual of `x_{n+1} − A_n x_n = y_{n+1}`, normalized by
/// `1 + ‖y‖_{1,β}`.
pub fn equation_residual(
    sys: &LinearSystem,
    x: &[DVector<f64>],
    y: &[DVector<f64>],
    rate: &GrowthRate,
    beta: f64,
    log_input_norm: f64,
) -> f64 {
    let w = sys.window();
    let denom = (log_input_norm.max(0.0) + (-log_input_norm.abs()).exp().ln_1p()).max(0.0);
    let mut worst = 0.0f64;
    for n in w.min..w.max {
        let i = w.offset(n);
        let r = &x[i + 1] - sys.matrix(n).to_dense() * &x[i] - &y[i + 1];
        let nr = r.norm();
        if nr == 0.0 {
            continue;
        }
        let t = (beta * rate.log_mu(n + 1) + nr.ln() - denom).exp();
        worst = worst.max(t);
    }
    worst
}

/// `x_n = Σ_k 𝒢(n, k) y_k` over the window.
pub fn solve_admissibility(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    y: &[DVector<f64>],
    beta: f64,
    rate: &GrowthRate,
    nu: &NuSequence,
    boundary: &Boundary,
) -> Result<SolveReport> {
    check_solve_inputs(sys, proj, y, boundary)?;
    let rate = rate.restrict(sys.window())?;
    let nu = nu.restrict(sys.window())?;
    let cocycle = ProjectedCocycle::new(sys, proj)?;
    let x = cocycle.apply(y)?;
    let ly = log_norm(y, &WeightedNormSpec::l1(beta), &rate, Some(&nu))?;
    let lx = log_norm(&x, &WeightedNormSpec::sup(beta), &rate, None)?;
    let max_residual = equation_residual(sys, &x, y, &rate, beta, ly);
    let abs_norms = if sys.domain() == Domain::TwoSided {
        match compute_n0(&rate) {
            Ok(n0) => {
                let si = WeightedNormSpec::abs(beta, NormP::One, &rate)?;
                let sx = WeightedNormSpec::abs(beta, NormP::Infinity, &rate)?;
                Some(AbsNorms {
                    n0,
                    input_norm: exp_or_inf(log_norm(y, &si, &rate, Some(&nu))?),
                    solution_norm: exp_or_inf(log_norm(&x, &sx, &rate, None)?),
                })
            }
            Err(_) => None,
        }
    } else {
        None
    };
    let bound_constant = if ly == f64::NEG_INFINITY {
        0.0
    } else {
        exp_or_inf(lx - ly)
    };
    Ok(SolveReport {
        beta,
        solution: to_rows(&x),
        max_residual,
        input_norm_1beta: exp_or_inf(ly),
        solution_norm_inf_beta: exp_or_inf(lx),
        bound_constant,
        abs_norms,
    })
}

/// Square boundary-value system: `P x_{N_min} = P y_{N_min}` (as `d_s` rows),
/// the recurrence rows, and `(Id − P) x_{N_max} = 0` (as `d_u` rows).
pub fn oracle_solve(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    y: &[DVector<f64>],
    boundary: &Boundary,
) -> Result<Sequence> {
    oracle_solve_weighted(sys, proj, y, boundary, None)
}

/// [`oracle_solve`] in the unknowns `z_n = μ_n^β x_n`, which keeps the
/// system well scaled when solutions span many orders of magnitude.
pub fn oracle_solve_weighted(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    y: &[DVector<f64>],
    boundary: &Boundary,
    weight: Option<(&GrowthRate, f64)>,
) -> Result<Sequence> {
    check_solve_inputs(sys, proj, y, boundary)?;
    if proj.window() != sys.window() {
        return Err(Error::Range("projection window differs from system window".into()));
    }
    let w = sys.window();
    let d = sys.dim();
    let len = w.len();
    let log_w = |n: i64| -> f64 { weight.map_or(0.0, |(r, b)| b * r.log_mu(n)) };
    let weighted_y = |n: i64| -> DVector<f64> { &y[w.offset(n)] * log_w(n).exp() };

    let p0 = proj.get(w.min);
    let left = column_space(p0, 1e-8);
    let ds = left.ncols();
    let right = proj.kernel_basis(w.max);
    let du = right.ncols();
    if ds + du != d {
        return Err(Error::SingularOracle(0));
    }
    let size = len * d;
    let mut band = BandMatrix::zeros(size, ds + d - 1, 2 * d - 1);
    let mut rhs = vec![0.0; size];

    let c_left = left.transpose() * p0;
    let y0 = c_left.clone() * weighted_y(w.min);
    for i in 0..ds {
        for j in 0..d {
            band.set(i, j, c_left[(i, j)]);
        }
        rhs[i] = y0[i];
    }
    for n in w.min..w.max {
        let k = w.offset(n);
        let a = sys.matrix(n);
        let shift = match weight {
            Some((r, b)) => r.log_ratio(n + 1, n).mul_f64(b),
            None => Dd::ZERO,
        };
        let coeff = ScaledMatrix {
            log_scale: a.log_scale + shift,
            mat: a.mat.clone(),
        }
        .to_dense();
        let yn = weighted_y(n + 1);
        for i in 0..d {
            let row = ds + k * d + i;
            for j in 0..d {
                band.set(row, k * d + j, -coeff[(i, j)]);
            }
            band.set(row, (k + 1) * d + i, 1.0);
            rhs[row] = yn[i];
        }
    }
    let c_right = right.transpose() * (DMatrix::identity(d, d) - proj.get(w.max));
    for i in 0..du {
        let row = ds + (len - 1) * d + i;
        for j in 0..d {
            band.set(row, (len - 1) * d + j, c_right[(i, j)]);
        }
    }
    let lu = band.factor().map_err(|e| Error::SingularOracle(e.column))?;
    let z = lu.solve(&rhs);
    Ok(w.indices()
        .map(|n| {
            let k = w.offset(n);
            let s = (-log_w(n)).exp();
            DVector::from_iterator(d, (0..d).map(|i| z[k * d + i] * s))
        })
        .collect())
}

/// Largest `μ_m^β‖x_m − x̃_m‖` relative to `‖x‖_{∞,β}`.
pub fn weighted_relative_error(
    x: &[DVector<f64>],
    reference: &[DVector<f64>],
    rate: &GrowthRate,
    beta: f64,
) -> Result<f64> {
    let diff: Sequence = x.iter().zip(reference).map(|(a, b)| a - b).collect();
    let rate = rate.restrict(crate::rates::Window::new(
        rate.window.min,
        rate.window.min + x.len() as i64 - 1,
    )?)?;
    let ld = log_norm(&diff, &WeightedNormSpec::sup(beta), &rate, None)?;
    let lr = log_norm(reference, &WeightedNormSpec::sup(beta), &rate, None)?;
    if ld == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok((ld - lr).exp())
}

/// Seeded input on the window of `rate` whose terms contribute comparably
/// to `‖y‖_{1,β}`; zero at the left end of one-sided windows.
pub fn random_input(rate: &GrowthRate, nu: &NuSequence, beta: f64, d: usize, seed: u64) -> Result<Sequence> {
    let nu = nu.restrict(rate.window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rate.window;
    Ok(w.indices()
        .map(|n| {
            let spread: f64 = rng.random_range(-2.0..2.0);
            let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if rate.domain == Domain::OneSided && n == w.min {
                return DVector::zeros(d);
            }
            v * (-beta * rate.log_mu(n) - nu.log_nu(n) + spread).exp()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNorm {
    pub beta: f64,
    #[serde(with = "crate::serde_f64")]
    pub log_exact_sup: f64,
    /// `max_{m,k} μ_m^β‖𝒢(m,k)‖ / (μ_k^β ν_k)`.
    #[serde(with = "crate::serde_f64")]
    pub exact_sup: f64,
    pub argmax: (i64, i64),
    /// Best `‖Ty‖_{∞,β}` over seeded random inputs with `‖y‖_{1,β} = 1`.
    #[serde(with = "crate::serde_f64")]
    pub sampled_lb: f64,
    /// `‖Ty‖_{∞,β}` for the impulse at the maximizing column along the top
    /// singular direction.
    #[serde(with = "crate::serde_f64")]
    pub impulse_lb: f64,
    pub samples: usize,
}

fn first_input_index(sys: &LinearSystem) -> i64 {
    match sys.domain() {
        Domain::OneSided => sys.window().min + 1,
        Domain::TwoSided => sys.window().min,
    }
}

/// Exact kernel supremum of `T_β: ℓ¹_β → ℓ^∞_β` and sampled lower bounds.
#[allow(clippy::too_many_arguments)]
pub fn operator_norm_t(
    sys: &LinearSystem,
    proj: &ProjectionFamily,
    rate: &GrowthRate,
    nu: &NuSequence,
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<OperatorNorm> {
    let w = sys.window();
    let rate = rate.restrict(w)?;
    let nu = nu.restrict(w)?;
    let cocycle = ProjectedCocycle::new(sys, proj)?;
    cocycle.require_invertible()?;
    let k0 = first_input_index(sys);
    if k0 > w.max {
        return Err(invalid("window too short for a nonzero input"));
    }
    let best: Vec<(Dd, i64, i64)> = (k0..=w.max)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| -> Result<(Dd, i64, i64)> {
            let col = cocycle.green_column(k)?;
            let mut top = (Dd::NEG_INFINITY, w.min, k);
            for (i, g) in col.iter().enumerate() {
                let m = w.min + i as i64;
                let v = g.log_norm() + rate.log_ratio(m, k).mul_f64(beta) - Dd::new(nu.log_nu(k));
                if v.total_cmp(&top.0).is_gt() {
                    top = (v, m, k);
                }
            }
            Ok(top)
        })
        .collect::<Result<Vec<_>>>()?;
    let (log_sup, am, ak) = best.into_iter().fold((Dd::NEG_INFINITY, w.min, k0), |a, b| {
        if b.0.total_cmp(&a.0).is_gt() {
            b
        } else {
            a
        }
    });
    let log_exact_sup = log_sup.to_f64();

    let d = sys.dim();
    let sup_spec = WeightedNormSpec::sup(beta);
    let apply_norm = |y: &Sequence| -> Result<f64> {
        let x = cocycle.apply(y)?;
        log_norm(&x, &sup_spec, &rate, None)
    };

    let g = cocycle.green_column(ak)?[w.offset(am)].mat.clone();
    let v = if d == 1 {
        DVector::from_element(1, 1.0)
    } else {
        crate::linalg::svd(&g).v.column(0).into_owned()
    };
    let mut impulse = vec![DVector::zeros(d); w.len()];
    let scale = -(beta * rate.log_mu(ak) + nu.log_nu(ak));
    impulse[w.offset(ak)] = v * scale.exp();
    let impulse_lb = apply_norm(&impulse)?;

    let sampled: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
            let mut y = vec![DVector::zeros(d); w.len()];
            let mut weights = Vec::with_capacity(w.len());
            for k in k0..=w.max {
                let t: f64 = rng.sample(Exp1);
                weights.push((k, t));
            }
            let total: f64 = weights.iter().map(|x| x.1).sum();
            for (k, t) in weights {
                let g = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
                let gn = g.norm();
                if gn == 0.0 {
                    continue;
                }
                let s = (t / total).ln() - gn.ln() - beta * rate.log_mu(k) - nu.log_nu(k);
                y[w.offset(k)] = g * s.exp();
            }
            apply_norm(&y)
        })
        .collect::<Result<Vec<_>>>()?;
    let log_sampled = sampled.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(OperatorNorm {
        beta,
        log_exact_sup,
        exact_sup: exp_or_inf(log_exact_sup),
        argmax: (am, ak),
        sampled_lb: exp_or_inf(log_sampled),
        impulse_lb: exp_or_inf(impulse_lb),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniquenessVerdict {
    Plausible,
    Inconclusive,
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitTrace {
    /// `β ln μ_n + ln‖𝒜(n, N_min)v‖` along the window.
    #[serde(with = "crate::serde_f64::vec")]
    pub trace: Vec<f64>,
    /// `(t_{N_max} − t_{N_min}) / (ln μ_{N_max} − ln μ_{N_min})`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub beta: f64,
    pub margin: f64,
    pub traces: Vec<OrbitTrace>,
    pub verdict: UniquenessVerdict,
}

/// Growth margin test: every homogeneous orbit from `Z` must leave the
/// `ℓ^∞_β` ball at rate at least `margin` per unit of `ln μ`. Without an
/// explicit margin it is `(λ − |β| − ε)/2` from `cert`.
pub fn uniqueness_probe(
    sys: &LinearSystem,
    rate: &GrowthRate,
    beta: f64,
    z_basis: &DMatrix<f64>,
    margin: Option<f64>,
    cert: Option<&DichotomyCertificate>,
) -> Result<UniquenessReport> {
    let margin = match (margin, cert) {
        (Some(m), _) => m,
        (None, Some(c)) => (c.lambda - beta.abs() - c.epsilon) / 2.0,
        (None, None) => return Err(invalid("uniqueness probe needs a margin or a certificate")),
    };
    if z_basis.ncols() > 0 && z_basis.nrows() != sys.dim() {
        return Err(Error::Dimension("Z basis rows differ from the system dimension".into()));
    }
    let w = sys.window();
    let rate = rate.restrict(w)?;
    if z_basis.ncols() == 0 {
        return Ok(UniquenessReport {
            beta,
            margin,
            traces: Vec::new(),
            verdict: UniquenessVerdict::Vacuous,
        });
    }
    let span = Dd::diff(rate.log_mu(w.max), rate.log_mu(w.min)).to_f64();
    let mut traces = Vec::with_capacity(z_basis.ncols());
    for c in 0..z_basis.ncols() {
        let mut v = ScaledMatrix::from_dense(DMatrix::from_column_slice(
            z_basis.nrows(),
            1,
            z_basis.column(c).as_slice(),
        ));
        let mut trace = Vec::with_capacity(w.len());
        trace.push(beta * rate.log_mu(w.min) + v.log_norm().to_f64());
        for n in w.min..w.max {
            v = sys.matrix(n).mul(&v);
            trace.push(beta * rate.log_mu(n + 1) + v.log_norm().to_f64());
        }
        let slope = (trace[trace.len() - 1] - trace[0]) / span;
        traces.push(OrbitTrace { trace, slope });
    }
    let ok = margin > 0.0 && traces.iter().all(|t| t.slope >= margin);
    Ok(UniquenessReport {
        beta,
        margin,
        traces,
        verdict: if ok {
            UniquenessVerdict::Plausible
        } else {
            UniquenessVerdict::Inconclusive
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub n: i64,
    pub log_x: f64,
    pub log_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleTable {
    pub rows: Vec<CounterexampleRow>,
    pub all_hold: bool,
    pub monotone: bool,
}

/// For `μ_n = e^{e^n}`, `A_n = (μ_{n+1}/μ_n)^{−1/2}` and the input
/// `y_n = (μ_n/μ_{n−1} − 1)` pulled back to unit `ℓ¹_{−1/2}`-type size, the
/// solution `x_n = μ_n^{−1/2} Σ_{k=1}^n (μ_{k+1}/μ_k − 1) μ_k^{1/2}` and
/// the lower bound `2((μ_{n+1}/μ_n)^{1/2} − (μ_1/μ_n)^{1/2})`, both as logs.
pub fn run_counterexample(n_max: i64) -> Result<CounterexampleTable> {
    if !(1..=40).contains(&n_max) {
        return Err(invalid(format!("n_max must lie in [1, 40], got {n_max}")));
    }
    let l: Vec<f64> = (0..=n_max + 1).map(|k| (k as f64).exp()).collect();
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let nu = n as usize;
        let terms: Vec<f64> = (1..=nu)
            .map(|k| log_expm1(Dd::diff(l[k + 1], l[k]).to_f64()) + Dd::diff(l[k], l[nu]).mul_f64(0.5).to_f64())
            .collect();
        let log_x = log_sum_exp(&terms);
        let a = Dd::diff(l[nu + 1], l[nu]).mul_f64(0.5).to_f64();
        let b = Dd::diff(l[1], l[nu]).mul_f64(0.5).to_f64();
        let log_bound = LN_2.to_f64() + log_diff_exp(a, b);
        rows.push(CounterexampleRow {
            n,
            log_x,
            log_bound,
            holds: log_x >= log_bound - 1e-9,
        });
    }
    let all_hold = rows.iter().all(|r| r.holds);
    let monotone = rows.windows(2).all(|p| p[1].log_x > p[0].log_x);
    Ok(CounterexampleTable {
        rows,
        all_hold,
        monotone,
    })
}
