use std::fmt;

use serde::{Deserialize, Serialize};

/// Pipeline stage that produced a failure inside [`crate::splitting::characterize`]
/// or [`crate::robustness::verify_persistence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StableSubspace,
    UnstableSubspace,
    Projections,
    Fit,
    Verify,
    GreenBound,
    Perturbed,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::StableSubspace => "stable_subspace",
            Stage::UnstableSubspace => "unstable_subspace",
            Stage::Projections => "build_projections",
            Stage::Fit => "fit_certificate",
            Stage::Verify => "verify_dichotomy",
            Stage::GreenBound => "green_bound",
            Stage::Perturbed => "perturbed_system",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("table is not strictly increasing at index {index}")]
    NonMonotone { index: i64 },
    #[error("logarithmic rate is undefined at negative index {0}")]
    NegativeIndex(i64),
    #[error("rate does not cross 1 on the window [{min}, {max}]")]
    NoThreshold { min: i64, max: i64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index range mismatch: {0}")]
    Range(String),
    #[error("forward evolution requested backwards in time (m = {m} < n = {n})")]
    Backward { m: i64, n: i64 },
    #[error("restriction of A_{n} to the kernel is singular (relative smallest singular value {ratio:e})")]
    SingularKernel { n: i64, ratio: f64 },
    #[error("fitted exponent {lambda} is not positive; the system is not dichotomic for these projections")]
    NotDichotomic { lambda: f64 },
    #[error("empty beta range: epsilon {epsilon} >= lambda {lambda}")]
    EmptyBetaRange { lambda: f64, epsilon: f64 },
    #[error("no reliable splitting at n = {n}: gap {gap} below threshold {threshold}")]
    NoGap { n: i64, gap: f64, threshold: f64 },
    #[error("stable dimension {stable} and unstable dimension {unstable} do not add up to {dim}")]
    SplitMismatch { stable: usize, unstable: usize, dim: usize },
    #[error("window too short to resolve a splitting with gap {gap}")]
    Unresolved { gap: f64 },
    #[error("forward image of Z loses rank at n = {n}")]
    RankDeficient { n: i64 },
    #[error("splitting is degenerate at n = {n}: basis condition number {cond:e}")]
    Degenerate { n: i64, cond: f64 },
    #[error("boundary-value system is singular at unknown {0}")]
    SingularOracle(usize),
    #[error("one-sided admissibility requires y_0 = 0")]
    NonzeroInitialInput,
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures that come from the mathematics (no gap, singular
    /// kernel, ...) as opposed to malformed input.
    pub fn is_analysis_failure(&self) -> bool {
        match self {
            Error::InvalidParameter(_)
            | Error::NonMonotone { .. }
            | Error::NegativeIndex(_)
            | Error::Dimension(_)
            | Error::Range(_)
            | Error::Backward { .. }
            | Error::NonzeroInitialInput
            | Error::EmptyBetaRange { .. } => false,
            Error::Stage { source, .. } => source.is_analysis_failure(),
            _ => true,
        }
    }

    /// Short machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NonMonotone { .. } => "non_monotone",
            Error::NegativeIndex(_) => "negative_index",
            Error::NoThreshold { .. } => "no_threshold",
            Error::Dimension(_) => "dimension",
            Error::Range(_) => "range",
            Error::Backward { .. } => "backward",
            Error::SingularKernel { .. } => "singular_kernel",
            Error::NotDichotomic { .. } => "not_dichotomic",
            Error::EmptyBetaRange { .. } => "empty_beta_range",
            Error::NoGap { .. } => "no_gap",
            Error::SplitMismatch { .. } => "split_mismatch",
            Error::Unresolved { .. } => "unresolved",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Degenerate { .. } => "degenerate",
            Error::SingularOracle(_) => "singular_oracle",
            Error::NonzeroInitialInput => "nonzero_initial_input",
            Error::Stage { source, .. } => source.code(),
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
