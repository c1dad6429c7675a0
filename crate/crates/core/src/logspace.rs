//! Log-domain scalars.
//!
//! Growth rates such as `μ_n = e^{e^n}` have logarithms of order `1e8` on
//! modest windows, and the quantities compared against them (log-norms of
//! long matrix products) differ by amounts many orders of magnitude smaller.
//! Plain `f64` subtraction of such values loses everything below `1e-8`.
//!
//! [`Dd`] is an unevaluated sum `hi + lo` of two doubles (double-double).
//! Differences of stored `f64` logarithms are exact in this representation,
//! and telescoping sums of them cancel to within `1e-30` relative.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Neg, Sub};

/// `ln 2` split into a double-double.
pub const LN_2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Double-double real: the value is `hi + lo` with `|lo| <= ulp(hi)/2`.
///
/// Non-finite values are carried in `hi` with `lo = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const NEG_INFINITY: Dd = Dd {
        hi: f64::NEG_INFINITY,
        lo: 0.0,
    };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact `a - b`.
    pub fn diff(a: f64, b: f64) -> Self {
        if !(a.is_finite() && b.is_finite()) {
            return Dd::new(a - b);
        }
        let (hi, lo) = two_sum(a, -b);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    /// Product with a double, accurate to about `2^-104` relative.
    pub fn mul_f64(self, b: f64) -> Self {
        if !(self.is_finite() && b.is_finite()) {
            return Dd::new(self.hi * b);
        }
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = fast_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    pub fn add_f64(self, b: f64) -> Self {
        self + Dd::new(b)
    }

    pub fn mul(self, b: Dd) -> Self {
        if !(self.is_finite() && b.is_finite()) {
            return Dd::new(self.hi * b.hi);
        }
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = fast_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, b: Dd) -> Self {
        if !(self.is_finite() && b.is_finite()) || b.hi == 0.0 {
            return Dd::new(self.hi / b.hi);
        }
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = fast_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match self.hi.total_cmp(&other.hi) {
            Ordering::Equal => self.lo.total_cmp(&other.lo),
            o => o,
        }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd::new(x)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, rhs: Dd) -> Dd {
        if !(self.is_finite() && rhs.is_finite()) {
            return Dd::new(self.hi + rhs.hi);
        }
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = fast_two_sum(s, e + t);
        let (hi, lo) = fast_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, rhs: Dd) {
        *self = *self + rhs;
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, rhs: Dd) -> Dd {
        self + (-rhs)
    }
}

/// `ln(Σ exp(t))` with the maximum factored out. Empty or all `-inf` input
/// gives `-inf`; a `+inf` term gives `+inf`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// `ln(e^a − e^b)` for `a >= b`; `-inf` when equal.
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    let d = b - a;
    if d > 0.0 {
        return f64::NAN;
    }
    if d == 0.0 {
        return f64::NEG_INFINITY;
    }
    // ln(1 - e^d) is accurate via ln_1p for d near -inf and exp_m1 near 0
    if d < -std::f64::consts::LN_2 {
        a + (-d.exp()).ln_1p()
    } else {
        a + (-d.exp_m1()).ln()
    }
}

/// `ln(e^x − 1)` for `x > 0` without overflowing for large `x`.
pub fn log_expm1(x: f64) -> f64 {
    if x > 36.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// Exponentiate, mapping overflow to `+inf` (the divergence sentinel).
pub fn exp_or_inf(x: f64) -> f64 {
    if x > f64::MAX.ln() {
        f64::INFINITY
    } else {
        x.exp()
    }
}

/// Binary exponent `k` such that `2^-k · x` lies in `[0.5, 1)`; `0` for zero
/// or non-finite input.
pub fn binary_exponent(x: f64) -> i32 {
    if x == 0.0 || !x.is_finite() {
        return 0;
    }
    let bits = x.abs().to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i32;
    if raw == 0 {
        // subnormal
        let scaled = x.abs() * 2f64.powi(64);
        return binary_exponent(scaled) - 64;
    }
    raw - 1022
}

/// `x · 2^k` without intermediate overflow of the power.
pub fn ldexp(mut x: f64, mut k: i32) -> f64 {
    while k > 1000 {
        x *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= 2f64.powi(-1000);
        k += 1000;
    }
    x * 2f64.powi(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_is_exact_for_distant_magnitudes() {
        let a = 20f64.exp();
        let b = 19f64.exp();
        let d = Dd::diff(a, b);
        // reconstruct a from b + d in double-double; must be bit-exact
        let back = Dd::new(b) + d;
        assert_eq!(back.hi, a);
        assert_eq!(back.lo, 0.0);
    }

    #[test]
    fn telescoping_sum_cancels() {
        let logs: Vec<f64> = (0..=20).map(|n| (n as f64).exp()).collect();
        let mut acc = Dd::ZERO;
        for k in 3..20 {
            acc += Dd::diff(logs[k + 1], logs[k]).mul_f64(-0.5);
        }
        let direct = Dd::diff(logs[20], logs[3]).mul_f64(-0.5);
        let residual = (acc - direct).to_f64();
        assert!(residual.abs() < 1e-20, "residual {residual}");
    }

    #[test]
    fn mul_div_round_trip() {
        let a = Dd::diff(1e8 + 0.125, 1e-9);
        let b = Dd::new(3.0);
        let back = a.mul(b).div(b);
        assert!((back - a).to_f64().abs() < 1e-22);
        assert_eq!(Dd::new(1.0).div(Dd::new(2.0)).to_f64(), 0.5);
    }

    #[test]
    fn ln2_constant_matches() {
        let two_ln2 = LN_2 + LN_2;
        assert!((two_ln2.to_f64() - 4f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[1.0, f64::INFINITY]), f64::INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_diff_exp_matches_direct() {
        let v = log_diff_exp(3.0, 1.0);
        assert!((v - (3f64.exp() - 1f64.exp()).ln()).abs() < 1e-14);
        let near = log_diff_exp(1.0, 1.0 - 1e-10);
        assert!((near - (1.0 + (1e-10f64).ln())).abs() < 1e-6);
        assert_eq!(log_diff_exp(2.0, 2.0), f64::NEG_INFINITY);
    }

    #[test]
    fn binary_exponent_brackets() {
        for &x in &[1.0, 0.75, 3.0, 1e-300, 5e-320, 1e300] {
            let k = binary_exponent(x);
            let m = ldexp(x, -k);
            assert!((0.5..1.0).contains(&m), "{x} -> {k} -> {m}");
        }
    }
}
