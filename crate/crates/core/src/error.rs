use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inertia matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularInertia { condition: f64 },

    #[error("inertia matrix is not positive definite at q2 = {q2} (lambda_min = {lambda_min})")]
    NonPositiveDefinite { q2: f64, lambda_min: f64 },

    #[error("barrier breached at t = {t}: m_bar*|r|^2 = {lhs} >= kappa_m^2 = {rhs}")]
    BarrierViolation { t: f64, lhs: f64, rhs: f64 },

    #[error("reference exceeds state constraint: {0}")]
    InfeasibleReference(String),

    #[error("gain condition violated: {0}")]
    GainCondition(String),

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("no solution in search bracket: {0}")]
    NoSolution(String),

    #[error("numeric overflow at t = {t}: {what}")]
    NumericOverflow { t: f64, what: String },

    #[error("empty log")]
    EmptyLog,

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("configuration schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("assumption gate failed: {0}")]
    AssumptionGate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
