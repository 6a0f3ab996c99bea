use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("step size underflow at x = {x}")]
    StepUnderflow { x: f64 },
    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("ill-conditioned system: condition number {0:e}")]
    IllConditioned(f64),
    #[error("spectral parameter too close to threshold: 1 - lambda = {0:e}")]
    GapTooCloseToThreshold(f64),
    #[error("p = {p} is outside the range of method {method}")]
    OutOfMethodRange { p: f64, method: &'static str },
    #[error("no root in bracket: {0}")]
    NoRootInBracket(String),
    #[error("near-singular Wronskian matrix: |det D| = {det:e}, floor {floor:e}")]
    NearSingularD { det: f64, floor: f64 },
    #[error("tail fit degenerate: amplitude {0:e}")]
    TailFitDegenerate(f64),
    #[error("normalization mismatch: {0}")]
    NormalizationMismatch(String),
    #[error("unknown moment {family}_{k}")]
    UnknownMoment { family: char, k: usize },
    #[error("blow-up at t = {t}: sup|u| = {sup}")]
    BlowUp { t: f64, sup: f64 },
    #[error("modulation Newton left the tube: {0}")]
    OutsideTube(String),
}

pub type Result<T> = std::result::Result<T, NlsError>;
