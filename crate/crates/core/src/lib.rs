//! Numerical laboratory for (μ,ν)-dichotomies of linear difference equations
//! `x_{n+1} = A_n x_n` on `ℝ^d`: weighted sequence spaces, Green kernels,
//! admissibility solvers, splitting reconstruction and robustness checks.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::should_implement_trait
)]

pub mod admissibility;
pub mod cocycle;
pub mod dichotomy;
pub mod error;
pub mod linalg;
pub mod logspace;
pub mod rates;
pub mod robustness;
pub mod serde_f64;
pub mod splitting;
pub mod system;

pub use error::{Error, Result, Stage};
