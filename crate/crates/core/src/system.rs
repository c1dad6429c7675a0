//! Matrix sequences `A_n`, evolution operators and planted test systems.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dichotomy::{DichotomyCertificate, ProjectionFamily};
use crate::error::{invalid, Error, Result};
use crate::linalg::{min_singular_value, random_orthogonal, spectral_norm, ScaledMatrix};
use crate::logspace::Dd;
use crate::rates::{Domain, GrowthRate, NuKind, NuSequence, Window};

/// `x_{n+1} = A_n x_n` on a window; `A_n` is stored for `n < N_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    dim: usize,
    window: Window,
    domain: Domain,
    matrices: Vec<ScaledMatrix>,
}

impl LinearSystem {
    pub fn new(domain: Domain, window: Window, matrices: Vec<ScaledMatrix>) -> Result<Self> {
        if domain == Domain::OneSided && window.min != 0 {
            return Err(invalid(format!("one-sided systems start at 0, got {}", window.min)));
        }
        if matrices.len() + 1 != window.len() {
            return Err(Error::Range(format!(
                "window [{}, {}] needs {} matrices, got {}",
                window.min,
                window.max,
                window.len() - 1,
                matrices.len()
            )));
        }
        let dim = matrices.first().map_or(0, |m| m.nrows());
        if matrices.is_empty() {
            return Err(invalid("a system needs at least one matrix"));
        }
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        for (i, a) in matrices.iter().enumerate() {
            let n = window.min + i as i64;
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "A_{n} is {}x{}, expected {dim}x{dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if !a.log_scale.is_finite() || a.mat.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("A_{n} has a non-finite entry")));
            }
        }
        Ok(LinearSystem {
            dim,
            window,
            domain,
            matrices,
        })
    }

    pub fn from_dense(domain: Domain, window: Window, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(
            domain,
            window,
            matrices.into_iter().map(ScaledMatrix::from_dense).collect(),
        )
    }

    /// `A_n ≡ a` on the window.
    pub fn constant(domain: Domain, window: Window, a: DMatrix<f64>) -> Result<Self> {
        let k = window.len().saturating_sub(1);
        Self::from_dense(domain, window, vec![a; k])
    }

    pub fn identity(domain: Domain, window: Window, dim: usize) -> Result<Self> {
        Self::constant(domain, window, DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `A_n` for `N_min ≤ n < N_max`.
    pub fn matrix(&self, n: i64) -> &ScaledMatrix {
        assert!(
            n >= self.window.min && n < self.window.max,
            "A_{n} outside [{}, {})",
            self.window.min,
            self.window.max
        );
        &self.matrices[(n - self.window.min) as usize]
    }

    pub fn matrices(&self) -> &[ScaledMatrix] {
        &self.matrices
    }

    fn check_index(&self, n: i64) -> Result<()> {
        if !self.window.contains(n) {
            return Err(Error::Range(format!(
                "index {n} outside [{}, {}]",
                self.window.min, self.window.max
            )));
        }
        Ok(())
    }

    /// `𝒜(m, n) = A_{m−1}⋯A_n`, identity for `m = n`.
    pub fn evolution(&self, m: i64, n: i64) -> Result<ScaledMatrix> {
        self.check_index(m)?;
        self.check_index(n)?;
        if m < n {
            return Err(Error::Backward { m, n });
        }
        let mut acc = ScaledMatrix::identity(self.dim);
        for k in n..m {
            acc = self.matrix(k).mul(&acc);
        }
        Ok(acc)
    }

    pub fn restrict(&self, window: Window) -> Result<LinearSystem> {
        if !self.window.contains_window(&window) || window.min == window.max {
            return Err(Error::Range(format!(
                "cannot restrict [{}, {}] to [{}, {}]",
                self.window.min, self.window.max, window.min, window.max
            )));
        }
        let a = (window.min - self.window.min) as usize;
        let b = (window.max - self.window.min) as usize;
        let domain = if self.domain == Domain::OneSided && window.min == 0 {
            Domain::OneSided
        } else if self.domain == Domain::OneSided {
            return Err(Error::Range(
                "a one-sided system can only be restricted on the right".into(),
            ));
        } else {
            Domain::TwoSided
        };
        LinearSystem::new(domain, window, self.matrices[a..b].to_vec())
    }

    /// `A_n + B_n`.
    pub fn perturbed(&self, b: &[ScaledMatrix]) -> Result<LinearSystem> {
        if b.len() != self.matrices.len() {
            return Err(Error::Range(format!(
                "perturbation has {} matrices, system has {}",
                b.len(),
                self.matrices.len()
            )));
        }
        let mats = self.matrices.iter().zip(b).map(|(a, b)| a.add(b)).collect();
        LinearSystem::new(self.domain, self.window, mats)
    }
}

/// `U_{j+1}ᵀ A_j U_j`: the action of `A_j` between kernel bases.
pub fn kernel_restriction(sys: &LinearSystem, proj: &ProjectionFamily, j: i64) -> Result<ScaledMatrix> {
    let a = sys.matrix(j);
    let uj = proj.kernel_basis(j);
    let uj1 = proj.kernel_basis(j + 1);
    if uj.ncols() != uj1.ncols() {
        return Err(Error::SingularKernel { n: j, ratio: 0.0 });
    }
    let m = uj1.transpose() * &a.mat * uj;
    if m.ncols() > 0 {
        let ratio = min_singular_value(&m) / spectral_norm(&a.mat);
        if !(ratio > 1e-10) {
            return Err(Error::SingularKernel { n: j, ratio });
        }
    }
    Ok(ScaledMatrix::new(a.log_scale, m))
}

/// Inverse of `𝒜(n, m)|_{Ker P_m}` for `m ≤ n`, as a `d_u × d_u` matrix from
/// the kernel basis at `n` to the kernel basis at `m`.
pub fn evolution_on_unstable(sys: &LinearSystem, proj: &ProjectionFamily, m: i64, n: i64) -> Result<ScaledMatrix> {
    sys.check_index(m)?;
    sys.check_index(n)?;
    if m > n {
        return Err(invalid(format!(
            "evolution_on_unstable needs m <= n, got m = {m}, n = {n}"
        )));
    }
    let du = proj.kernel_basis(n).ncols();
    let mut acc = ScaledMatrix::identity(du);
    for j in (m..n).rev() {
        let mj = kernel_restriction(sys, proj, j)?;
        let inv = mj
            .mat
            .clone()
            .try_inverse()
            .ok_or(Error::SingularKernel { n: j, ratio: 0.0 })?;
        acc = ScaledMatrix::new(-mj.log_scale, inv).mul(&acc);
    }
    Ok(acc)
}

/// Ground-truth system with a known splitting.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub system: LinearSystem,
    pub projections: ProjectionFamily,
    pub certificate: DichotomyCertificate,
    pub similarity: Vec<DMatrix<f64>>,
    /// Per-direction exponents, stable (negative) first.
    pub exponents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    /// One exponent per direction; negative entries are stable and carry the
    /// `ν_n/ν_{n+1}` twist.
    pub exponents: Vec<f64>,
    pub similarity_cond: f64,
    /// Draw a fresh similarity `L_n` at every index instead of one `L`.
    #[serde(default)]
    pub vary_similarity: bool,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn two_block(lambda_s: f64, lambda_u: f64, dims: (usize, usize), cond: f64, seed: u64) -> Self {
        let mut exponents = vec![-lambda_s; dims.0];
        exponents.extend(std::iter::repeat_n(lambda_u, dims.1));
        PlantedSpec {
            exponents,
            similarity_cond: cond,
            vary_similarity: false,
            seed,
        }
    }
}

fn similarity_matrix(d: usize, cond: f64, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let q1 = random_orthogonal(d, rng);
    let q2 = random_orthogonal(d, rng);
    let sigma: Vec<f64> = (0..d).map(|i| cond.powf(i as f64 / (d - 1) as f64)).collect();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sigma.clone()));
    let sinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, sigma.iter().map(|x| 1.0 / x)));
    (&q1 * s * &q2, q2.transpose() * sinv * q1.transpose())
}

/// `A_n = L_{n+1}·diag(c_n)·L_n^{−1}` with `ln c_{n,i} = e_i·(ln μ_{n+1} − ln μ_n)`,
/// plus `ln ν_n − ln ν_{n+1}` on stable directions.
pub fn make_planted(rate: &GrowthRate, nu: &NuSequence, spec: &PlantedSpec) -> Result<PlantedModel> {
    let d = spec.exponents.len();
    if d == 0 {
        return Err(invalid("planted model needs at least one direction"));
    }
    if spec.exponents.iter().any(|e| *e == 0.0 || !e.is_finite()) {
        return Err(invalid("planted exponents must be finite and nonzero"));
    }
    if !(spec.similarity_cond >= 1.0 && spec.similarity_cond.is_finite()) {
        return Err(invalid(format!(
            "similarity condition bound must be >= 1, got {}",
            spec.similarity_cond
        )));
    }
    let window = rate.window;
    if window.len() < 2 {
        return Err(invalid("planted model needs a window with at least two indices"));
    }
    if !nu.window.contains_window(&window) {
        return Err(Error::Range("nu does not cover the rate window".into()));
    }
    let mut exps: Vec<f64> = spec.exponents.iter().copied().filter(|e| *e < 0.0).collect();
    let ds = exps.len();
    exps.extend(spec.exponents.iter().copied().filter(|e| *e > 0.0));

    let identity = spec.similarity_cond == 1.0 || d == 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (l, linv): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) = if identity {
        let i = DMatrix::identity(d, d);
        (vec![i.clone(); window.len()], vec![i; window.len()])
    } else if spec.vary_similarity {
        window
            .indices()
            .map(|_| similarity_matrix(d, spec.similarity_cond, &mut rng))
            .unzip()
    } else {
        let (a, b) = similarity_matrix(d, spec.similarity_cond, &mut rng);
        (vec![a; window.len()], vec![b; window.len()])
    };

    let mut matrices = Vec::with_capacity(window.len() - 1);
    for n in window.min..window.max {
        let dl = rate.log_ratio(n + 1, n);
        let twist = Dd::diff(nu.log_nu(n), nu.log_nu(n + 1));
        let logs: Vec<Dd> = exps
            .iter()
            .map(|&e| {
                let base = dl.mul_f64(e);
                if e < 0.0 {
                    base + twist
                } else {
                    base
                }
            })
            .collect();
        let top = *logs.iter().max_by(|a, b| a.total_cmp(b)).expect("d >= 1");
        let diag = nalgebra::DVector::from_iterator(d, logs.iter().map(|c| (*c - top).to_f64().exp()));
        let i = window.offset(n);
        let mat = if identity {
            DMatrix::from_diagonal(&diag)
        } else {
            &l[i + 1] * DMatrix::from_diagonal(&diag) * &linv[i]
        };
        matrices.push(ScaledMatrix::new(top, mat));
    }
    let system = LinearSystem::new(rate.domain, window, matrices)?;

    let mut block = DMatrix::zeros(d, d);
    for i in 0..ds {
        block[(i, i)] = 1.0;
    }
    let projections = window
        .indices()
        .map(|n| {
            let i = window.offset(n);
            if identity {
                block.clone()
            } else {
                &l[i] * &block * &linv[i]
            }
        })
        .collect();
    let projections = ProjectionFamily::new(window, projections)?;

    let lambda_s = exps[..ds].iter().map(|e| -e).fold(f64::INFINITY, f64::min);
    let lambda_u = exps[ds..].iter().copied().fold(f64::INFINITY, f64::min);
    let epsilon = match nu.kind {
        NuKind::Power { epsilon } => epsilon,
        NuKind::Uniform { .. } => 0.0,
        NuKind::Table => crate::dichotomy::estimate_epsilon(rate, nu),
    };
    let certificate = DichotomyCertificate {
        d: if identity { 1.0 } else { spec.similarity_cond },
        lambda: lambda_s.min(lambda_u),
        epsilon,
    };
    Ok(PlantedModel {
        system,
        projections,
        certificate,
        similarity: l,
        exponents: exps,
    })
}

/// Two-block planted model with stable rate `λ_s` on `d_s` directions and
/// unstable rate `λ_u` on `d_u` directions.
pub fn make_planted_model(
    rate: &GrowthRate,
    nu: &NuSequence,
    lambda_s: f64,
    lambda_u: f64,
    dims: (usize, usize),
    similarity_cond: f64,
    seed: u64,
) -> Result<PlantedModel> {
    if !(lambda_s > 0.0 && lambda_u > 0.0) {
        return Err(invalid("planted exponents must be positive"));
    }
    make_planted(
        rate,
        nu,
        &PlantedSpec::two_block(lambda_s, lambda_u, dims, similarity_cond, seed),
    )
}

/// Scalar system `A_n = (μ_{n+1}/μ_n)^{−1/2}` for `μ_n = e^{e^n}`.
pub fn scalar_example(window: Window) -> Result<(GrowthRate, LinearSystem)> {
    let rate = GrowthRate::new(crate::rates::RateKind::DoublyExponential, Domain::OneSided, window)?;
    let mats = (window.min..window.max)
        .map(|n| ScaledMatrix::new(rate.log_ratio(n + 1, n).mul_f64(-0.5), DMatrix::from_element(1, 1, 1.0)))
        .collect();
    let sys = LinearSystem::new(Domain::OneSided, window, mats)?;
    Ok((rate, sys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub n: i64,
    pub rows: Vec<Vec<f64>>,
    /// The matrix is `exp(log_scale + log_scale_lo) · rows`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub log_scale: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub log_scale_lo: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub dim: usize,
    pub window: Window,
    #[serde(default)]
    pub domain: Option<Domain>,
    pub matrices: Vec<MatrixEntry>,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Dimension(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl SystemFile {
    pub fn into_system(self) -> Result<LinearSystem> {
        let window = Window::new(self.window.min, self.window.max)?;
        let domain = self.domain.unwrap_or(if window.min == 0 {
            Domain::OneSided
        } else {
            Domain::TwoSided
        });
        let mut entries = self.matrices;
        entries.sort_by_key(|e| e.n);
        let expected: Vec<i64> = (window.min..window.max).collect();
        let got: Vec<i64> = entries.iter().map(|e| e.n).collect();
        if expected != got {
            return Err(Error::Range(format!(
                "matrices must be given for every n in [{}, {}), exactly once",
                window.min, window.max
            )));
        }
        let mats = entries
            .iter()
            .map(|e| {
                let m = rows_to_matrix(&e.rows, &format!("A_{}", e.n))?;
                if m.nrows() != self.dim || m.ncols() != self.dim {
                    return Err(Error::Dimension(format!(
                        "A_{} is {}x{}, declared dim {}",
                        e.n,
                        m.nrows(),
                        m.ncols(),
                        self.dim
                    )));
                }
                Ok(ScaledMatrix::new(
                    Dd {
                        hi: e.log_scale,
                        lo: 0.0,
                    } + Dd::new(e.log_scale_lo),
                    m,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        LinearSystem::new(domain, window, mats)
    }

    pub fn from_system(sys: &LinearSystem) -> SystemFile {
        SystemFile {
            dim: sys.dim,
            window: sys.window,
            domain: Some(sys.domain),
            matrices: sys
                .matrices
                .iter()
                .enumerate()
                .map(|(i, a)| MatrixEntry {
                    n: sys.window.min + i as i64,
                    rows: matrix_to_rows(&a.mat),
                    log_scale: a.log_scale.hi,
                    log_scale_lo: a.log_scale.lo,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexedMatrix {
    pub n: i64,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedFile {
    pub system: SystemFile,
    pub projections: Vec<IndexedMatrix>,
    pub similarity: Vec<IndexedMatrix>,
    pub certificate: DichotomyCertificate,
    pub exponents: Vec<f64>,
}

impl PlantedModel {
    pub fn to_file(&self) -> PlantedFile {
        let w = self.system.window();
        PlantedFile {
            system: SystemFile::from_system(&self.system),
            projections: w
                .indices()
                .map(|n| IndexedMatrix {
                    n,
                    rows: matrix_to_rows(self.projections.get(n)),
                })
                .collect(),
            similarity: w
                .indices()
                .zip(&self.similarity)
                .map(|(n, l)| IndexedMatrix {
                    n,
                    rows: matrix_to_rows(l),
                })
                .collect(),
            certificate: self.certificate,
            exponents: self.exponents.clone(),
        }
    }

    pub fn from_file(file: PlantedFile) -> Result<PlantedModel> {
        let system = file.system.into_system()?;
        let w = system.window();
        let load = |v: &[IndexedMatrix], what: &str| -> Result<Vec<DMatrix<f64>>> {
            let mut v = v.to_vec();
            v.sort_by_key(|e| e.n);
            if v.iter().map(|e| e.n).ne(w.indices()) {
                return Err(Error::Range(format!("{what} must cover the window")));
            }
            v.iter().map(|e| rows_to_matrix(&e.rows, what)).collect()
        };
        let projections = ProjectionFamily::new(w, load(&file.projections, "projections")?)?;
        let similarity = load(&file.similarity, "similarity")?;
        Ok(PlantedModel {
            system,
            projections,
            certificate: file.certificate,
            similarity,
            exponents: file.exponents,
        })
    }
}
