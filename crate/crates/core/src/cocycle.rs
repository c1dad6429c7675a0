//! Evolution split by a projection family.
//!
//! Raw products `𝒜(m, n)P_n` lose the stable part to rounding as soon as the
//! unstable part has grown by `1/ε_mach`. The chains here project after every
//! step instead:
//!
//! * stable: `X(n, n) = P_n`, `X(m+1, n) = P_{m+1} A_m X(m, n)`;
//! * unstable: `Y(n, n) = Id − P_n`, `Y(m, n) = E_m Y(m+1, n)` with
//!   `E_m = U_m (U_{m+1}ᵀ A_m U_m)^{−1} U_{m+1}ᵀ` on orthonormal kernel bases.
//!
//! The Green kernel is `X(m, n)` for `m ≥ n` and `−Y(m, n)` for `m < n`.

use nalgebra::{DMatrix, DVector};

use crate::dichotomy::ProjectionFamily;
use crate::error::{Error, Result};
use crate::linalg::ScaledMatrix;
use crate::rates::Window;
use crate::system::{kernel_restriction, LinearSystem};

pub struct ProjectedCocycle<'a> {
    sys: &'a LinearSystem,
    proj: &'a ProjectionFamily,
    stable_step: Vec<ScaledMatrix>,
    unstable_step: Vec<Option<ScaledMatrix>>,
    kernel_ratio: Vec<f64>,
}

impl<'a> ProjectedCocycle<'a> {
    pub fn new(sys: &'a LinearSystem, proj: &'a ProjectionFamily) -> Result<Self> {
        if proj.window() != sys.window() {
            return Err(Error::Range(format!(
                "projection window [{}, {}] differs from system window [{}, {}]",
                proj.window().min,
                proj.window().max,
                sys.window().min,
                sys.window().max
            )));
        }
        if proj.dim() != sys.dim() {
            return Err(Error::Dimension(format!(
                "projections are {0}x{0}, system is {1}x{1}",
                proj.dim(),
                sys.dim()
            )));
        }
        let w = sys.window();
        let d = sys.dim();
        let mut stable_step = Vec::with_capacity(w.len() - 1);
        let mut unstable_step = Vec::with_capacity(w.len() - 1);
        let mut kernel_ratio = Vec::with_capacity(w.len() - 1);
        for m in w.min..w.max {
            let a = sys.matrix(m);
            stable_step.push(a.premul(proj.get(m + 1)));
            let um = proj.kernel_basis(m);
            let um1 = proj.kernel_basis(m + 1);
            if um.ncols() == 0 && um1.ncols() == 0 {
                unstable_step.push(Some(ScaledMatrix::zeros(d, d)));
                kernel_ratio.push(f64::INFINITY);
                continue;
            }
            match kernel_restriction(sys, proj, m) {
                Ok(mm) => {
                    let ratio = crate::linalg::min_singular_value(&mm.mat)
                        / crate::linalg::spectral_norm(&mm.mat).max(f64::MIN_POSITIVE);
                    kernel_ratio.push(ratio);
                    let inv = mm.mat.clone().try_inverse();
                    unstable_step.push(inv.map(|inv| ScaledMatrix::new(-mm.log_scale, um * inv * um1.transpose())));
                }
                Err(Error::SingularKernel { ratio, .. }) => {
                    kernel_ratio.push(ratio);
                    unstable_step.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(ProjectedCocycle {
            sys,
            proj,
            stable_step,
            unstable_step,
            kernel_ratio,
        })
    }

    pub fn window(&self) -> Window {
        self.sys.window()
    }

    pub fn system(&self) -> &LinearSystem {
        self.sys
    }

    pub fn projections(&self) -> &ProjectionFamily {
        self.proj
    }

    /// `σ_min/‖·‖` of each kernel restriction (`+inf` when `d_u = 0`).
    pub fn kernel_ratios(&self) -> &[f64] {
        &self.kernel_ratio
    }

    /// First index whose kernel restriction is not invertible.
    pub fn first_singular(&self) -> Option<i64> {
        self.unstable_step
            .iter()
            .position(|s| s.is_none())
            .map(|i| self.window().min + i as i64)
    }

    pub fn require_invertible(&self) -> Result<()> {
        match self.first_singular() {
            Some(n) => Err(Error::SingularKernel {
                n,
                ratio: self.kernel_ratio[(n - self.window().min) as usize],
            }),
            None => Ok(()),
        }
    }

    /// `X(m, n)` for `m = n ..= N_max`.
    pub fn stable_chain(&self, n: i64) -> Vec<ScaledMatrix> {
        let w = self.window();
        let mut out = Vec::with_capacity((w.max - n + 1) as usize);
        let mut x = ScaledMatrix::from_dense(self.proj.get(n).clone());
        for m in n..w.max {
            let next = self.stable_step[(m - w.min) as usize].mul(&x);
            out.push(std::mem::replace(&mut x, next));
        }
        out.push(x);
        out
    }

    /// `Y(m, n)` for `m = N_min ..= n`, entry `m − N_min`; `None` below a
    /// singular kernel restriction.
    pub fn unstable_chain(&self, n: i64) -> Vec<Option<ScaledMatrix>> {
        let w = self.window();
        let d = self.sys.dim();
        let mut out = vec![None; (n - w.min + 1) as usize];
        let mut y = ScaledMatrix::from_dense(DMatrix::identity(d, d) - self.proj.get(n));
        for m in (w.min..n).rev() {
            let i = (m - w.min) as usize;
            match &self.unstable_step[i] {
                Some(e) => {
                    let next = e.mul(&y);
                    out[i + 1] = Some(std::mem::replace(&mut y, next));
                }
                None => {
                    out[i + 1] = Some(y);
                    return out;
                }
            }
        }
        out[0] = Some(y);
        out
    }

    /// `𝒢(m, n)` for every `m` in the window.
    pub fn green_column(&self, n: i64) -> Result<Vec<ScaledMatrix>> {
        let w = self.window();
        let unstable = self.unstable_chain(n);
        let mut col = Vec::with_capacity(w.len());
        for m in w.min..n {
            let y = unstable[(m - w.min) as usize].as_ref().ok_or_else(|| {
                let j = self.first_singular().unwrap_or(m);
                Error::SingularKernel {
                    n: j,
                    ratio: self.kernel_ratio[(j - w.min) as usize],
                }
            })?;
            col.push(ScaledMatrix {
                log_scale: y.log_scale,
                mat: -&y.mat,
            });
        }
        col.extend(self.stable_chain(n));
        Ok(col)
    }

    /// `x_n = Σ_k 𝒢(n, k) y_k` over the window, by one forward and one
    /// backward recurrence.
    pub fn apply(&self, y: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.require_invertible()?;
        let w = self.window();
        let d = self.sys.dim();
        let len = w.len();
        let mut s = Vec::with_capacity(len);
        s.push(self.proj.get(w.min) * &y[0]);
        for m in w.min..w.max {
            let i = (m - w.min) as usize;
            let step = self.stable_step[i].to_dense();
            let next = step * &s[i] + self.proj.get(m + 1) * &y[i + 1];
            s.push(next);
        }
        let mut x = vec![DVector::zeros(d); len];
        let mut u = DVector::<f64>::zeros(d);
        x[len - 1] = s[len - 1].clone();
        for m in (w.min..w.max).rev() {
            let i = (m - w.min) as usize;
            let e = self.unstable_step[i].as_ref().expect("checked invertible").to_dense();
            let yk = &y[i + 1] - self.proj.get(m + 1) * &y[i + 1];
            u = e * (u + yk);
            x[i] = &s[i] - &u;
        }
        Ok(x)
    }
}
