use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("innovation covariance is numerically singular (condition number {cond:e})")]
    SingularInnovation { cond: f64 },

    #[error("infeasible action: u = {u} exceeds available energy {battery}")]
    InfeasibleAction { u: f64, battery: f64 },

    #[error("acknowledgment {gamma_hat} has zero likelihood under the feedback model")]
    ZeroLikelihood { gamma_hat: u8 },

    #[error("value {0} is not a state of the finite chain")]
    UnknownState(f64),

    #[error("belief has no mass left after pruning")]
    EmptyBelief,

    #[error("successor battery level {value} outside grid [0, {b_max}]")]
    GridLookupOutOfRange { value: f64, b_max: f64 },

    #[error("relative value iteration did not converge in {iters} iterations (last span {span:e})")]
    NoConvergence { iters: usize, span: f64 },

    #[error("average cost {rho:e} reaches the covariance grid cap {cap:e}; the configuration is not stabilizable by any policy on this grid")]
    Unbounded { rho: f64, cap: f64 },

    #[error("stability condition not satisfied: lhs {lhs} > bound {bound}")]
    A2NotSatisfied { lhs: f64, bound: f64 },

    #[error("empirical covariance exceeds the fitted bound by {excess} (limit {limit})")]
    BoundViolated { excess: f64, limit: f64 },

    #[error("the DP solvers support scalar systems only (state dimension {0})")]
    NonScalar(usize),

    #[error("schema error in `{field}`: expected {expected}")]
    Schema { field: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn schema(field: impl Into<String>, expected: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            expected: expected.into(),
        }
    }
}
