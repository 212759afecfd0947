use thiserror::Error;

/// Errors raised by the solvers and model constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("NonCommensurateDelay: delay {delay} is not an integer multiple of step {step}")]
    NonCommensurateDelay { delay: f64, step: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too few paths: {paths} paths for {basis} basis functions")]
    TooFewPaths { paths: usize, basis: usize },

    #[error("RankDeficientBasis: regression design has effective rank 0")]
    RankDeficientBasis,

    #[error("NonFiniteState: first non-finite value at step {step}, path {path}")]
    NonFiniteState { step: isize, path: usize },

    #[error("PicardDivergence after {iterations} iterations (last gap {gap:e})")]
    PicardDivergence { iterations: usize, gap: f64 },

    #[error("InversionFailure at step {step}, path {path}: residual {residual:e}")]
    InversionFailure { step: usize, path: usize, residual: f64 },

    #[error("DegenerateMultipliers: h0 and h1 are both zero")]
    DegenerateMultipliers,

    #[error("EmptyConstraintSet: {0}")]
    EmptyConstraintSet(String),

    #[error("InfeasibleStall: constraint gap {gap:e} stopped shrinking at penalty stage {stage}")]
    InfeasibleStall { stage: usize, gap: f64 },

    #[error("DegenerateDiffusion: {0}")]
    DegenerateDiffusion(String),

    #[error("DelayPresent: closed form requires a zero delayed coefficient, got {0}")]
    DelayPresent(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
