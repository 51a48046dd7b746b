use thiserror::Error;

/// Errors raised by the geometric and dynamical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid half-plane point: im = {0} must be positive")]
    InvalidPoint(f64),

    #[error("flow time {0} outside the supported range |t| <= 700")]
    FlowRange(f64),

    #[error("deck element entry overflow (beyond 2^62)")]
    DeckOverflow,

    #[error("invalid deck element: {0}")]
    InvalidDeck(String),

    #[error("no closed geodesic: element is {0}")]
    NoClosedGeodesic(&'static str),

    #[error("outside product chart: h22 = {h22:.3e}")]
    OutsideProductChart { h22: f64 },

    #[error("bracket exceeds eta = {eta:.3e}: sigma = {sigma:.3e}, nu = {nu:.3e}, c = {c:.3e}")]
    ExceedsEta { eta: f64, sigma: f64, nu: f64, c: f64 },

    #[error("no candidate deck element aligns the pair")]
    NoCandidateDeck,

    #[error("epsilon {epsilon} too large for this base point (limit {limit})")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },

    #[error("no parameters satisfy the shadowing constraints: {0}")]
    InfeasibleParameters(String),

    #[error("no return within budget")]
    NoReturn,

    #[error("iterate left the delta-ball at step {step}: distance {distance:.3e} > {limit:.3e}")]
    LeftDeltaBall { step: usize, distance: f64, limit: f64 },

    #[error("shadow iteration did not converge: last gap {gap:.3e} after {steps} steps")]
    NotConverged { gap: f64, steps: usize },

    #[error("verification failed at (k = {k}, t = {t:.4}): residual {residual:.3e} > {bound:.3e}")]
    VerificationFailed { k: usize, t: f64, residual: f64, bound: f64 },

    #[error("recurrence budget exhausted")]
    BudgetExhausted,

    #[error("non-hyperbolic return (trace {trace})")]
    NonHyperbolicReturn { trace: i64 },

    #[error("periodic orbit rejected: {0}")]
    Rejected(String),

    #[error("ambiguous match: {0} classes matched")]
    AmbiguousMatch(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
