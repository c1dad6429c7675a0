//! Growth rates `μ`, nonuniformity sequences `ν` and weighted sequence norms.
//!
//! Everything is stored as natural logarithms. `μ_n = e^{e^n}` is not a
//! double for `n ≥ 7`, so no routine here exponentiates `log μ` on its own:
//! weights are combined with the quantity they multiply while still in the
//! log domain.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::logspace::{exp_or_inf, log_sum_exp, Dd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    OneSided,
    TwoSided,
}

/// Closed integer interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub min: i64,
    pub max: i64,
}

impl Window {
    pub fn new(min: i64, max: i64) -> Result<Self> {
        if min > max {
            return Err(invalid(format!("empty window [{min}, {max}]")));
        }
        Ok(Window { min, max })
    }

    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, n: i64) -> bool {
        self.min <= n && n <= self.max
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        self.min <= other.min && other.max <= self.max
    }

    /// Position of `n` in window-ordered storage.
    pub fn offset(&self, n: i64) -> usize {
        debug_assert!(self.contains(n), "{n} outside [{}, {}]", self.min, self.max);
        (n - self.min) as usize
    }

    pub fn indices(&self) -> impl DoubleEndedIterator<Item = i64> + Clone {
        self.min..=self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Exponential,
    Polynomial,
    Logarithmic,
    DoublyExponential,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRate {
    pub domain: Domain,
    pub kind: RateKind,
    pub window: Window,
    log_mu: Vec<f64>,
}

fn analytic_log_mu(kind: RateKind, domain: Domain, n: i64) -> Result<f64> {
    let x = n as f64;
    Ok(match kind {
        RateKind::Exponential => x,
        RateKind::Polynomial => {
            if n >= 0 {
                x.ln_1p()
            } else {
                // μ_n = 1/(1-n) below zero
                -(-x).ln_1p()
            }
        }
        RateKind::Logarithmic => {
            if n < 0 {
                return Err(Error::NegativeIndex(n));
            }
            (2.0 + x).ln().ln()
        }
        RateKind::DoublyExponential => {
            if domain == Domain::TwoSided {
                return Err(invalid(
                    "doubly exponential rate has no two-sided form (e^{e^n} -> 1, not 0)",
                ));
            }
            x.exp()
        }
        RateKind::Table => unreachable!("tables are built by GrowthRate::from_table"),
    })
}

fn check_domain_window(domain: Domain, window: &Window) -> Result<()> {
    if domain == Domain::OneSided && window.min < 0 {
        return Err(invalid(format!(
            "one-sided rate on a window with negative start {}",
            window.min
        )));
    }
    Ok(())
}

impl GrowthRate {
    /// Closed-form rate. Polynomial on a two-sided domain uses
    /// `μ_n = 1/(1−n)` for `n < 0`.
    pub fn new(kind: RateKind, domain: Domain, window: Window) -> Result<Self> {
        if kind == RateKind::Table {
            return Err(invalid("use GrowthRate::from_table for tabulated rates"));
        }
        if kind == RateKind::Logarithmic && domain == Domain::TwoSided {
            return Err(invalid("logarithmic rate is one-sided only"));
        }
        check_domain_window(domain, &window)?;
        let log_mu = window
            .indices()
            .map(|n| analytic_log_mu(kind, domain, n))
            .collect::<Result<Vec<_>>>()?;
        let rate = GrowthRate {
            domain,
            kind,
            window,
            log_mu,
        };
        rate.validate()?;
        Ok(rate)
    }

    /// Tabulated rate from `(index, ln μ)` pairs covering a contiguous window.
    pub fn from_table(domain: Domain, entries: &[(i64, f64)]) -> Result<Self> {
        let (window, log_mu) = tabulate(entries)?;
        check_domain_window(domain, &window)?;
        let rate = GrowthRate {
            domain,
            kind: RateKind::Table,
            window,
            log_mu,
        };
        rate.validate()?;
        Ok(rate)
    }

    fn validate(&self) -> Result<()> {
        for (i, v) in self.log_mu.iter().enumerate() {
            if !v.is_finite() {
                return Err(invalid(format!(
                    "log mu is not finite at index {}",
                    self.window.min + i as i64
                )));
            }
        }
        for (i, w) in self.log_mu.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonMonotone {
                    index: self.window.min + i as i64 + 1,
                });
            }
        }
        Ok(())
    }

    pub fn log_mu(&self, n: i64) -> f64 {
        self.log_mu[self.window.offset(n)]
    }

    pub fn log_mu_values(&self) -> &[f64] {
        &self.log_mu
    }

    /// Exact `log μ_m − log μ_n`.
    pub fn log_ratio(&self, m: i64, n: i64) -> Dd {
        Dd::diff(self.log_mu(m), self.log_mu(n))
    }

    pub fn restrict(&self, window: Window) -> Result<GrowthRate> {
        if !self.window.contains_window(&window) {
            return Err(Error::Range(format!(
                "[{}, {}] is not inside the rate window [{}, {}]",
                window.min, window.max, self.window.min, self.window.max
            )));
        }
        let a = self.window.offset(window.min);
        let b = self.window.offset(window.max);
        Ok(GrowthRate {
            domain: self.domain,
            kind: self.kind,
            window,
            log_mu: self.log_mu[a..=b].to_vec(),
        })
    }

    /// Finite-window proxy for `μ_n → 0` as `n → −∞`: the left end lies
    /// below 1. Always true for one-sided rates.
    pub fn left_tail_ok(&self) -> bool {
        self.domain == Domain::OneSided || self.log_mu[0] < 0.0
    }
}

/// First window index with `μ_n ≥ 1`.
pub fn compute_n0(rate: &GrowthRate) -> Result<i64> {
    if rate.domain != Domain::TwoSided {
        return Err(invalid("n0 is defined for two-sided rates"));
    }
    let w = rate.window;
    if rate.log_mu(w.min) >= 0.0 || rate.log_mu(w.max) < 0.0 {
        return Err(Error::NoThreshold { min: w.min, max: w.max });
    }
    Ok(w.indices()
        .find(|&n| rate.log_mu(n) >= 0.0)
        .expect("sign change guarantees a crossing"))
}

fn tabulate(entries: &[(i64, f64)]) -> Result<(Window, Vec<f64>)> {
    if entries.is_empty() {
        return Err(invalid("empty table"));
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|e| e.0);
    for w in sorted.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            return Err(Error::Range(format!(
                "table indices must be contiguous (gap or duplicate after {})",
                w[0].0
            )));
        }
    }
    let window = Window::new(sorted[0].0, sorted[sorted.len() - 1].0)?;
    Ok((window, sorted.into_iter().map(|e| e.1).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuKind {
    /// `ν_n ≡ C` with `C ≥ 1`, stored as `ln C`.
    Uniform {
        log_c: f64,
    },
    /// `ν_n = μ_n^{ε}` on the right and `μ_n^{−ε}` on the left, so `ν ≥ 1`.
    Power {
        epsilon: f64,
    },
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSequence {
    pub kind: NuKind,
    pub window: Window,
    log_nu: Vec<f64>,
}

impl NuSequence {
    pub fn uniform(window: Window, log_c: f64) -> Result<Self> {
        if !(log_c >= 0.0 && log_c.is_finite()) {
            return Err(invalid(format!("uniform nu needs ln C >= 0, got {log_c}")));
        }
        Ok(NuSequence {
            kind: NuKind::Uniform { log_c },
            window,
            log_nu: vec![log_c; window.len()],
        })
    }

    pub fn ones(window: Window) -> Self {
        Self::uniform(window, 0.0).expect("ln 1 = 0 is valid")
    }

    /// `ln ν_n = ε·|ln μ_n|`.
    pub fn power(rate: &GrowthRate, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("power nu needs epsilon >= 0, got {epsilon}")));
        }
        Ok(NuSequence {
            kind: NuKind::Power { epsilon },
            window: rate.window,
            log_nu: rate.log_mu.iter().map(|l| epsilon * l.abs()).collect(),
        })
    }

    pub fn from_table(entries: &[(i64, f64)]) -> Result<Self> {
        let (window, log_nu) = tabulate(entries)?;
        for (i, v) in log_nu.iter().enumerate() {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!(
                    "ln nu must be finite and >= 0 (index {}: {v})",
                    window.min + i as i64
                )));
            }
        }
        Ok(NuSequence {
            kind: NuKind::Table,
            window,
            log_nu,
        })
    }

    pub fn log_nu(&self, n: i64) -> f64 {
        self.log_nu[self.window.offset(n)]
    }

    pub fn log_nu_values(&self) -> &[f64] {
        &self.log_nu
    }

    /// `c·ν` for `ln c ≥ 0`.
    pub fn scaled(&self, log_c: f64) -> Result<Self> {
        let log_nu: Vec<f64> = self.log_nu.iter().map(|v| v + log_c).collect();
        if log_nu.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("scaled nu drops below 1"));
        }
        let kind = match self.kind {
            NuKind::Uniform { log_c: c } => NuKind::Uniform { log_c: c + log_c },
            _ => NuKind::Table,
        };
        Ok(NuSequence {
            kind,
            window: self.window,
            log_nu,
        })
    }

    pub fn restrict(&self, window: Window) -> Result<NuSequence> {
        if !self.window.contains_window(&window) {
            return Err(Error::Range(format!(
                "[{}, {}] is not inside the nu window [{}, {}]",
                window.min, window.max, self.window.min, self.window.max
            )));
        }
        let a = self.window.offset(window.min);
        let b = self.window.offset(window.max);
        Ok(NuSequence {
            kind: self.kind,
            window,
            log_nu: self.log_nu[a..=b].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormP {
    One,
    Infinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum NormVariant {
    Plain,
    /// Exponent `|β|` below `n0`, `−|β|` from `n0` on.
    Abs {
        n0: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormSpec {
    pub beta: f64,
    pub p: NormP,
    pub variant: NormVariant,
}

impl WeightedNormSpec {
    pub fn sup(beta: f64) -> Self {
        WeightedNormSpec {
            beta,
            p: NormP::Infinity,
            variant: NormVariant::Plain,
        }
    }

    pub fn l1(beta: f64) -> Self {
        WeightedNormSpec {
            beta,
            p: NormP::One,
            variant: NormVariant::Plain,
        }
    }

    /// `|·|`-variant tied to the threshold of `rate`.
    pub fn abs(beta: f64, p: NormP, rate: &GrowthRate) -> Result<Self> {
        Ok(WeightedNormSpec {
            beta,
            p,
            variant: NormVariant::Abs { n0: compute_n0(rate)? },
        })
    }

    /// Exponent applied to `ln μ_n`.
    pub fn exponent(&self, n: i64) -> f64 {
        match self.variant {
            NormVariant::Plain => self.beta,
            NormVariant::Abs { n0 } => {
                if n < n0 {
                    self.beta.abs()
                } else {
                    -self.beta.abs()
                }
            }
        }
    }

    fn check(&self, rate: &GrowthRate) -> Result<()> {
        if let NormVariant::Abs { n0 } = self.variant {
            let expected = compute_n0(rate)?;
            if n0 != expected {
                return Err(invalid(format!(
                    "abs norm threshold n0 = {n0} differs from the rate's n0 = {expected}"
                )));
            }
        }
        Ok(())
    }
}

/// Sequence of vectors indexed by a window (entry `i` is index `min + i`).
pub type Sequence = Vec<DVector<f64>>;

pub(crate) fn check_sequence(seq: &[DVector<f64>], window: &Window) -> Result<usize> {
    if seq.len() != window.len() {
        return Err(Error::Range(format!(
            "sequence has {} entries, window [{}, {}] needs {}",
            seq.len(),
            window.min,
            window.max,
            window.len()
        )));
    }
    let d = seq.first().map_or(0, |v| v.len());
    if let Some(i) = seq.iter().position(|v| v.len() != d) {
        return Err(Error::Dimension(format!(
            "entry {} has length {}, expected {d}",
            window.min + i as i64,
            seq[i].len()
        )));
    }
    Ok(d)
}

/// Per-index log terms `e(n)·ln μ_n + ln‖x_n‖ [+ ln ν_n]`.
fn log_terms(
    seq: &[DVector<f64>],
    spec: &WeightedNormSpec,
    rate: &GrowthRate,
    nu: Option<&NuSequence>,
) -> Result<Vec<f64>> {
    check_sequence(seq, &rate.window)?;
    spec.check(rate)?;
    let nu = match (spec.p, nu) {
        (NormP::One, None) => return Err(invalid("the l1 norm needs a nu sequence")),
        (NormP::One, Some(nu)) => {
            if !nu.window.contains_window(&rate.window) {
                return Err(Error::Range("nu does not cover the rate window".into()));
            }
            Some(nu)
        }
        (NormP::Infinity, _) => None,
    };
    Ok(rate
        .window
        .indices()
        .zip(seq)
        .map(|(n, x)| {
            let norm = x.norm();
            if norm == 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut t = spec.exponent(n) * rate.log_mu(n) + norm.ln();
            if let Some(nu) = nu {
                t += nu.log_nu(n);
            }
            t
        })
        .collect())
}

/// Natural log of the weighted norm; `-inf` for the zero sequence.
pub fn log_norm(
    seq: &[DVector<f64>],
    spec: &WeightedNormSpec,
    rate: &GrowthRate,
    nu: Option<&NuSequence>,
) -> Result<f64> {
    let terms = log_terms(seq, spec, rate, nu)?;
    Ok(match spec.p {
        NormP::Infinity => terms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        NormP::One => log_sum_exp(&terms),
    })
}

/// Weighted norm; `+inf` when the value overflows a double.
pub fn norm(seq: &[DVector<f64>], spec: &WeightedNormSpec, rate: &GrowthRate, nu: Option<&NuSequence>) -> Result<f64> {
    log_norm(seq, spec, rate, nu).map(exp_or_inf)
}
