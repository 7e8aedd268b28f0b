use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian: asymmetry {asymmetry:.3e} exceeds {limit:.3e}")]
    NotHermitian { asymmetry: f64, limit: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("channel matrix is rank deficient (sigma_min / sigma_max = {ratio:.3e})")]
    RankDeficientChannel { ratio: f64 },

    #[error("root bracket [{lo}, {hi}] does not straddle a sign change (f(lo) = {f_lo:.3e}, f(hi) = {f_hi:.3e})")]
    InvalidBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("covariance is singular or not positive definite (min eigenvalue {min_eig:.3e})")]
    SingularCovariance { min_eig: f64 },

    #[error("feasibility fixed point did not converge after {iterations} iterations (last change {change:.3e})")]
    FixedPointDiverged { iterations: usize, change: f64 },

    #[error("dual system matrix L is not positive definite for delta = {delta:.3e}; try a larger delta")]
    IllConditionedDual { delta: f64 },

    #[error("degenerate-case witness failed verification: {0}")]
    WitnessInconsistent(String),

    #[error("solver produced a non-finite value at iteration {iteration}; try a smaller stepsize")]
    NumericalDivergence { iteration: usize },

    #[error("rank-one extraction is degenerate for user {user}: tr(Q_k X_k) = {value:.3e}")]
    ExtractionDegenerate { user: usize, value: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("output failed: {0}")]
    Output(String),

    #[error("scenario is infeasible: power budget {power_budget:.6e} mW below minimum {p_low:.6e} mW")]
    Infeasible { power_budget: f64, p_low: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
