use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular volatility at t = {t}: smallest eigenvalue of sigma sigma^T is {eigenvalue:e}, below {eig_min:e}")]
    SingularVolatility { t: f64, eigenvalue: f64, eig_min: f64 },

    #[error("bad time grid: {0}")]
    BadGrid(String),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("invalid constraint set: {0}")]
    InvalidSet(String),

    #[error("consumption set has no strictly positive point at t = {t}")]
    NoFeasiblePositivePoint { t: f64 },

    #[error("consumption set has no point with finite power utility at t = {t}")]
    NoFeasiblePoint { t: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("log utility requires beta >= 0, got {0}")]
    NegativeBeta(f64),

    #[error("coefficient `{name}` = {value} exceeds its declared bound {bound} at t = {t}")]
    CoefficientBound {
        name: &'static str,
        value: f64,
        bound: f64,
        t: f64,
    },

    #[error("backward ODE step control underflowed near t = {t}")]
    StiffnessFailure { t: f64 },

    #[error("regression design matrix is rank deficient at step {step}")]
    RegressionSingular { step: usize },

    #[error("implicit fixed-point iteration diverged at step {step}, path {path}")]
    FixedPointDivergence { step: usize, path: usize },

    #[error("{paths} paths is too few for a basis of dimension {basis} (need at least {required})")]
    InsufficientPaths {
        paths: usize,
        basis: usize,
        required: usize,
    },

    #[error("driver inputs are state dependent; deterministic solve is not applicable")]
    NotDeterministic,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("non-positive consumption {value} at t = {t} on path {path}")]
    ConsumptionNonPositive { t: f64, path: usize, value: f64 },

    #[error("strategy kind {found} cannot be simulated by the {simulator} simulator")]
    WrongStrategyKind {
        found: &'static str,
        simulator: &'static str,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
