use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("q must lie in [0, 1), got {0}")]
    InvalidQ(f64),

    #[error("weight {which}({n}, {k}) = {value} is not positive")]
    NonPositiveWeight {
        which: &'static str,
        n: usize,
        k: usize,
        value: f64,
    },

    #[error("weight {which}({n}, {k}) is not finite")]
    WeightOverflow { which: &'static str, n: usize, k: usize },

    #[error("sum {which}({n}) does not stabilize: partial value {partial} after {terms} terms")]
    DivergentSum {
        which: &'static str,
        n: usize,
        partial: f64,
        terms: usize,
    },

    #[error("tail product for mode {n} from site {k} did not converge (last step changed it by {delta})")]
    TailNotConverged { n: usize, k: usize, delta: f64 },

    #[error("boundary trace of copy {copy}, mode {n}{sign} did not converge")]
    TraceNotConverged { copy: usize, n: usize, sign: char },

    #[error("weight family cannot be evaluated at ({n}, {k})")]
    IndexMismatch { n: usize, k: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid resolution {got} is below the minimum {min}")]
    GridTooCoarse { got: usize, min: usize },

    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),
}
