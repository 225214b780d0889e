use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("drift condition violated: best fitted mean-reversion constant {c:.6e} is not positive")]
    DriftConditionViolated { c: f64 },

    #[error("a-priori growth bounds cannot be verified: {0}")]
    AssumptionUnverifiable(String),

    #[error("ergodic Bellman solver did not converge by t = {t_max} (last slope change {last_change:.3e}, residual {residual:.3e})")]
    NotConverged {
        t_max: f64,
        last_change: f64,
        residual: f64,
    },

    #[error("solution is on a non-ergodic branch (fitted mean-reversion constant {c:.6e})")]
    NonErgodicBranch { c: f64 },

    #[error("time step {dt:.3e} exceeds the stability limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("factor left the guard band on path {path} at t = {time}: |y| = {y:.3e}")]
    NumericalOverflow { path: usize, time: f64, y: f64 },

    #[error("saddle point violated: {0}")]
    SaddleViolation(String),

    #[error("growth curve is not convex near lambda = {lambda}: second difference {second_diff:.3e}")]
    CurveNotConvex { lambda: f64, second_diff: f64 },

    #[error("argument outside the domain: {0}")]
    Domain(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
