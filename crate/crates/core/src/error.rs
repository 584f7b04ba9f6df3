use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("integration failed at s = {s:.6}: {reason}")]
    IntegrationFailure { s: f64, reason: String },

    #[error("profile became non-positive at s = {s:.6}")]
    NonPositive { s: f64 },

    #[error("profile invariant violated: {0}")]
    InvariantViolation(String),

    #[error("integral identity requires beta >= beta1 for singular profiles (beta = {beta}, beta1 = {beta1})")]
    WrongRegime { beta: f64, beta1: f64 },

    #[error("inversion requires m = (n-2)/(n+2) = {expected}, got m = {got}")]
    WrongExponent { expected: f64, got: f64 },

    #[error("operation not defined for profile kind {0}")]
    WrongKind(String),

    #[error("profile kinds differ: {0} vs {1}")]
    KindMismatch(String, String),

    #[error("fit window holds {found} nodes, at least {needed} required")]
    WindowTooShort { found: usize, needed: usize },

    #[error("tail deviation does not decay over the fit window: {0}")]
    NoDecay(String),

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("initial data break the sandwich bounds at r = {r:.6e}: {detail}")]
    SandwichViolation { r: f64, detail: String },

    #[error("Newton iteration diverged at t = {t:.6e} with dt = {dt:.3e}; try dt <= {suggested_dt:.3e}")]
    NewtonDivergence { t: f64, dt: f64, suggested_dt: f64 },

    #[error("positivity lost at node {node} (t = {t:.6e})")]
    PositivityLoss { node: usize, t: f64 },

    #[error("state time t = {t} is at or past the extinction time T = {big_t}")]
    PastExtinction { t: f64, big_t: f64 },

    #[error("solution is not extincting: {0}")]
    NotExtincting(String),
}

pub type Result<T> = std::result::Result<T, Error>;
