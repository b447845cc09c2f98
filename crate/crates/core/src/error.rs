use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coefficient budget exceeded: {needed} orbits requested, cap is {cap}")]
    Budget { needed: usize, cap: usize },

    #[error("flow left its domain: l1 norm {norm:.3e} exceeds 2*eps_chi = {limit:.3e} at t = {time}")]
    FlowEscape { norm: f64, limit: f64, time: f64 },

    #[error("state norm {norm:.3e} is outside the admissible ball of radius {radius:.3e}")]
    NormEscape { norm: f64, radius: f64 },

    #[error("parameter plan infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
