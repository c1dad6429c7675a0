//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::logspace::{binary_exponent, exp_or_inf, ldexp, Dd, LN_2};

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        return ((a + d).hypot(c - b) + (a - d).hypot(c + b)) / 2.0;
    }
    singular_values(m)[0]
}

/// Smallest singular value of a square matrix; `+inf` for 0x0.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let s = singular_values(m);
    s[s.len() - 1]
}

/// Thin SVD `m = u·diag(s)·vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(r, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(c, 0),
        };
    }
    let f = to_faer(m);
    match f.thin_svd() {
        Ok(d) => {
            let (u, s, v) = (d.U(), d.S().column_vector(), d.V());
            Svd {
                u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
                s: DVector::from_fn(k, |i, _| s[i]),
                v: DMatrix::from_fn(c, k, |i, j| v[(i, j)]),
            }
        }
        Err(_) => Svd {
            u: DMatrix::from_element(r, k, f64::NAN),
            s: DVector::from_element(k, f64::NAN),
            v: DMatrix::from_element(c, k, f64::NAN),
        },
    }
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return DVector::zeros(0);
    }
    match to_faer(m).singular_values() {
        Ok(s) => DVector::from_vec(s),
        Err(_) => DVector::from_element(k, f64::NAN),
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Matrix stored as `exp(log_scale) · mat` with `max|mat| ∈ [0.5, 1)` (or
/// `mat = 0`). Products of thousands of factors with entries like
/// `e^{±10^8}` stay representable; renormalization is by exact powers of two.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMatrix {
    pub log_scale: Dd,
    pub mat: DMatrix<f64>,
}

impl ScaledMatrix {
    pub fn new(log_scale: Dd, mat: DMatrix<f64>) -> Self {
        let mut s = ScaledMatrix { log_scale, mat };
        s.renormalize();
        s
    }

    pub fn from_dense(mat: DMatrix<f64>) -> Self {
        Self::new(Dd::ZERO, mat)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_dense(DMatrix::identity(d, d))
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        ScaledMatrix {
            log_scale: Dd::ZERO,
            mat: DMatrix::zeros(r, c),
        }
    }

    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.mat.iter().all(|&x| x == 0.0)
    }

    fn renormalize(&mut self) {
        let m = max_abs(&self.mat);
        if m == 0.0 || !m.is_finite() {
            if m == 0.0 {
                self.log_scale = Dd::ZERO;
            }
            return;
        }
        let k = binary_exponent(m);
        if k != 0 {
            self.mat.apply(|x| *x = ldexp(*x, -k));
            self.log_scale += LN_2.mul_f64(k as f64);
        }
    }

    pub fn mul(&self, rhs: &ScaledMatrix) -> ScaledMatrix {
        ScaledMatrix::new(self.log_scale + rhs.log_scale, &self.mat * &rhs.mat)
    }

    /// Left-multiply by an unscaled matrix.
    pub fn premul(&self, lhs: &DMatrix<f64>) -> ScaledMatrix {
        ScaledMatrix::new(self.log_scale, lhs * &self.mat)
    }

    /// Right-multiply by an unscaled matrix.
    pub fn postmul(&self, rhs: &DMatrix<f64>) -> ScaledMatrix {
        ScaledMatrix::new(self.log_scale, &self.mat * rhs)
    }

    /// `self + other` formed at the larger of the two scales.
    pub fn add(&self, other: &ScaledMatrix) -> ScaledMatrix {
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        let (big, small) = if self.log_scale.total_cmp(&other.log_scale).is_ge() {
            (self, other)
        } else {
            (other, self)
        };
        let rel = (small.log_scale - big.log_scale).to_f64().exp();
        ScaledMatrix::new(big.log_scale, &big.mat + &small.mat * rel)
    }

    /// Natural log of the spectral norm; `-inf` for the zero matrix.
    pub fn log_norm(&self) -> Dd {
        let n = spectral_norm(&self.mat);
        if n == 0.0 {
            return Dd::NEG_INFINITY;
        }
        self.log_scale.add_f64(n.ln())
    }

    /// Materialize; entries underflow to zero or overflow to `±inf`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if self.is_zero() {
            return self.mat.clone();
        }
        let ls = self.log_scale.to_f64();
        let f = exp_or_inf(ls);
        if f.is_finite() && f > 0.0 {
            &self.mat * f
        } else {
            // split the factor so moderately sized entries survive
            self.mat.map(|x| {
                if x == 0.0 {
                    0.0
                } else {
                    let lx = x.abs().ln() + ls;
                    x.signum() * exp_or_inf(lx)
                }
            })
        }
    }
}

/// Orthonormal basis of the column space, rank decided relative to the
/// largest singular value.
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let d = m.nrows();
    if m.ncols() == 0 || d == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = svd(m);
    let smax = svd.s[0];
    if smax == 0.0 {
        return DMatrix::zeros(d, 0);
    }
    let k = svd.s.iter().filter(|s| **s > rel_tol * smax).count();
    svd.u.columns(0, k).into_owned()
}

/// Thin QR orthonormalization of a full-column-rank matrix. Returns the `Q`
/// factor and `ln|R_ii|` for each column (`-inf` on exact deficiency).
pub fn thin_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (d, k) = m.shape();
    if k == 0 {
        return (DMatrix::zeros(d, 0), Vec::new());
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let mut logs = Vec::with_capacity(k);
    for i in 0..k {
        let rii = r[(i, i)];
        if rii < 0.0 {
            let mut col = q.column_mut(i);
            col.neg_mut();
        }
        logs.push(rii.abs().ln());
    }
    (q.columns(0, k).into_owned(), logs)
}

/// Principal angles between the spans of two orthonormal bases, ascending.
/// Returns `min(p, q)` angles, computed from paired sines and cosines so
/// that angles near zero keep full relative accuracy.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.nrows(), b.nrows(), "bases must share the ambient space");
    let (big, small) = if a.ncols() >= b.ncols() { (a, b) } else { (b, a) };
    let k = small.ncols();
    if k == 0 {
        return Vec::new();
    }
    let cross = big.transpose() * small;
    let mut cos: Vec<f64> = if cross.is_empty() {
        vec![0.0; k]
    } else {
        singular_values(&cross).iter().copied().collect()
    };
    cos.sort_by(|x, y| y.total_cmp(x));
    cos.resize(k, 0.0);
    let resid = small - big * &cross;
    let mut sin: Vec<f64> = singular_values(&resid).iter().copied().collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    sin.resize(k, 0.0);
    cos.iter()
        .zip(&sin)
        .map(|(&c, &s)| s.min(1.0).atan2(c.min(1.0)))
        .collect()
}

/// Largest principal angle, with `π/2` when the dimensions differ.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a == b {
        return 0.0;
    }
    principal_angles(a, b).into_iter().fold(0.0f64, |acc, x| acc.max(x))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let (q, _) = thin_qr(&g);
    q
}

/// Banded matrix with partial-pivoting LU, storage sized for pivot fill-in.
///
/// Entry `(r, c)` lives at `r * width + (c + kl − r)` with
/// `width = 2·kl + ku + 1`, so columns `r − kl ..= r + ku + kl` of each row
/// are addressable.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub column: usize,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, r: usize, c: usize) -> Option<usize> {
        let rel = c as isize + self.kl as isize - r as isize;
        if rel < 0 || rel >= self.width as isize {
            None
        } else {
            Some(r * self.width + rel as usize)
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.offset(r, c).map_or(0.0, |i| self.data[i])
    }

    /// Set an entry inside the declared band.
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(
            c + self.kl >= r && c <= r + self.ku,
            "entry ({r},{c}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let i = self.offset(r, c).expect("in band");
        self.data[i] = v;
    }

    /// In-place LU; returns the factorization or the first zero pivot.
    pub fn factor(mut self) -> Result<BandLu, SingularPivot> {
        let n = self.n;
        let mut piv = vec![0usize; n];
        let scale = self.data.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[k] = p;
            if best == 0.0 || best <= scale * f64::EPSILON * 1e-3 {
                return Err(SingularPivot { column: k });
            }
            let last_col = (k + self.ku + self.kl).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let a = self.get(k, c);
                    let b = self.get(p, c);
                    if let Some(i) = self.offset(k, c) {
                        self.data[i] = b;
                    }
                    if let Some(i) = self.offset(p, c) {
                        self.data[i] = a;
                    }
                }
            }
            let pivot = self.get(k, k);
            for r in k + 1..=last_row {
                let i_rk = self.offset(r, k).expect("in band");
                let f = self.data[i_rk] / pivot;
                self.data[i_rk] = f;
                if f == 0.0 {
                    continue;
                }
                for c in k + 1..=last_col {
                    let ukc = self.get(k, c);
                    if ukc != 0.0 {
                        let i = self.offset(r, c).expect("fill within band");
                        self.data[i] -= f * ukc;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.m.n;
        assert_eq!(rhs.len(), n);
        let mut x = rhs.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let last_row = (k + self.m.kl).min(n - 1);
            let xk = x[k];
            for r in k + 1..=last_row {
                x[r] -= self.m.get(r, k) * xk;
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.m.ku + self.m.kl).min(n - 1);
            let mut s = x[k];
            for c in k + 1..=last_col {
                s -= self.m.get(k, c) * x[c];
            }
            x[k] = s / self.m.get(k, k);
        }
        x
    }
}
