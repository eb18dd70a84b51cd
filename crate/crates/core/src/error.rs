use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("displacement limit exceeded: |x| = {position:.6} m > {limit:.6} m at t = {time:.4} s")]
    DisplacementLimitExceeded { position: f64, limit: f64, time: f64 },

    #[error("record of {samples} samples does not span an integer number of periods ({periods:.4})")]
    NonIntegerPeriodSpan { samples: usize, periods: f64 },

    #[error("delay of {delay} samples is not shorter than the record ({len} samples)")]
    DelayTooLong { delay: usize, len: usize },

    #[error("response not settled after {periods} periods (coefficient change {change:.3e} > {tol:.3e})")]
    NotSettled { periods: usize, change: f64, tol: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:.3e} > {tol:.3e})")]
    FixedPointDiverged { iterations: usize, residual: f64, tol: f64 },

    #[error("continuation failed at grid index {index}: {source}")]
    SweepFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("regressor matrix for phase row {row} is rank deficient (condition number {condition:.3e})")]
    RankDeficient { row: usize, condition: f64 },

    #[error("B(0) is singular (condition number {condition:.3e})")]
    SingularB0 { condition: f64 },

    #[error("phase grid mismatch: {0}")]
    GridMismatch(String),

    #[error("orbit is not periodic: return residual {residual:.3e} exceeds {tol:.3e}")]
    NotPeriodic { residual: f64, tol: f64 },

    #[error("shooting diverged after {iterations} iterations (residual {residual:.3e})")]
    ShootingDiverged { iterations: usize, residual: f64 },

    #[error("kernel matrix is ill-conditioned even with jitter {jitter:.3e}")]
    IllConditionedKernel { jitter: f64 },

    #[error("hyperparameter optimisation failed from every start")]
    OptimFailed,

    #[error("contour G(omega, A) = {gamma} does not intersect the sampled region")]
    NoIntersection { gamma: f64 },

    #[error("no fold found in the requested range")]
    NoFold,

    #[error("no attractor reached within {periods} periods")]
    EscapeTimeout { periods: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
